//! Dynamic random communication graph via gossip-style peer sampling.
//!
//! Each iteration every agent draws a fresh uniform view of `in_degree`
//! non-self peers; uniform wholesale resampling is the target distribution
//! of a peer-sampling service, so the simulation draws from it directly.
//! Edges are read bidirectionally: agent `i` hears from `j` whenever either
//! one's view contains the other.

use std::collections::BTreeSet;

use rand::Rng;
use thiserror::Error;

use crate::learning::AgentState;

#[derive(Debug, Error)]
pub enum GossipError {
    #[error("population must be at least 2, got {0}")]
    PopulationTooSmall(usize),
    #[error("in-degree {in_degree} out of range 1..={max} for this population")]
    DegreeTooLarge { in_degree: usize, max: usize },
}

/// One agent's freshly sampled out-view.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GossipView {
    pub agent_id: usize,
    pub neighbors: BTreeSet<usize>,
}

/// What one agent announces per iteration: its current best bundle and the
/// Q-value it holds for it.
#[derive(Debug, Clone, PartialEq)]
pub struct BundleMessage {
    pub sender: usize,
    /// Index into the shared action space.
    pub bundle_index: usize,
    pub value: f64,
}

/// Draws a fresh uniform view for every agent. The graph is dynamic: each
/// call resamples wholesale from the current rng state.
pub fn resample_views(
    population: usize,
    in_degree: usize,
    rng: &mut impl Rng,
) -> Result<Vec<GossipView>, GossipError> {
    if population < 2 {
        return Err(GossipError::PopulationTooSmall(population));
    }
    if in_degree == 0 || in_degree > population - 1 {
        return Err(GossipError::DegreeTooLarge {
            in_degree,
            max: population - 1,
        });
    }
    let views = (0..population)
        .map(|agent_id| {
            let neighbors = rand::seq::index::sample(rng, population - 1, in_degree)
                .into_iter()
                // skip over self: 0..population-1 indexes everyone but agent_id
                .map(|j| if j < agent_id { j } else { j + 1 })
                .collect();
            GossipView {
                agent_id,
                neighbors,
            }
        })
        .collect();
    Ok(views)
}

/// Computes every agent's announcement (greedy argmax of its Q-values, ties
/// to canonical bundle order) and delivers it along all bidirectional
/// contacts of this iteration's views. Inputs are immutable snapshots, so
/// no agent observes intra-iteration updates of its peers.
pub fn exchange(views: &[GossipView], agents: &[AgentState]) -> Vec<Vec<BundleMessage>> {
    debug_assert_eq!(views.len(), agents.len());
    let announcements: Vec<BundleMessage> = agents
        .iter()
        .map(|agent| {
            let best = agent.greedy_argmax();
            BundleMessage {
                sender: agent.id,
                bundle_index: best,
                value: agent.q_values[best],
            }
        })
        .collect();

    let mut contacts: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); agents.len()];
    for view in views {
        for &peer in &view.neighbors {
            contacts[view.agent_id].insert(peer);
            contacts[peer].insert(view.agent_id);
        }
    }
    contacts
        .into_iter()
        .map(|peers| {
            peers
                .into_iter()
                .map(|j| announcements[j].clone())
                .collect()
        })
        .collect()
}
