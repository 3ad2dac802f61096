//! Legitimacy metrics for a consensus bundle.
//!
//! Four measures: compromise cost (mean non-overlap between each agent's
//! preferred bundle and the consensus), unfairness (coefficient of variation
//! of compromise over agents), popularity (vote mass of the consensus
//! relative to the best same-size bundle), and budget utilization.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::bundles::{jaccard, ActionSpace, Bundle};
use crate::learning::AgentState;
use crate::pabulib::ElectionInstance;

/// Which preference a voter's compromise is measured against: the agent's
/// initial best-overlap bundle (default) or its raw approval ballot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CompromiseBasis {
    #[default]
    InitialBundle,
    Ballot,
}

/// Metric convention note embedded in every report so numbers are never
/// compared across conventions silently.
pub const POPULARITY_NORMALIZATION: &str = "top_k_vote_sum";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsReport {
    pub compromise_cost: f64,
    pub unfairness: f64,
    pub popularity: f64,
    pub budget_utilization: f64,
    pub per_agent_compromise: BTreeMap<usize, f64>,
    pub rule_overlaps: BTreeMap<String, f64>,
    pub compromise_basis: CompromiseBasis,
    pub popularity_normalization: &'static str,
}

/// Per-agent `1 - Jaccard(preferred, consensus)` and its arithmetic mean.
pub fn compromise_cost(
    agents: &[AgentState],
    space: &ActionSpace,
    consensus: &Bundle,
    basis: CompromiseBasis,
) -> (f64, BTreeMap<usize, f64>) {
    let per_agent: BTreeMap<usize, f64> = agents
        .iter()
        .map(|agent| {
            let preferred = match basis {
                CompromiseBasis::InitialBundle => {
                    &space.get(agent.initial_bundle).project_ids
                }
                CompromiseBasis::Ballot => &agent.ballot.approved,
            };
            (agent.id, 1.0 - jaccard(preferred, &consensus.project_ids))
        })
        .collect();
    let mean = if per_agent.is_empty() {
        0.0
    } else {
        per_agent.values().sum::<f64>() / per_agent.len() as f64
    };
    (mean, per_agent)
}

/// Coefficient of variation: population standard deviation over the mean,
/// zero by convention when the mean is zero.
pub fn unfairness(per_agent: &BTreeMap<usize, f64>) -> f64 {
    if per_agent.is_empty() {
        return 0.0;
    }
    let n = per_agent.len() as f64;
    let mean = per_agent.values().sum::<f64>() / n;
    if mean == 0.0 {
        return 0.0;
    }
    let variance = per_agent.values().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    variance.sqrt() / mean
}

/// Vote mass of the consensus projects relative to the `k` most-voted
/// projects of the instance (`k` = consensus size); 1.0 when every project
/// is equally voted, or when nobody voted at all.
pub fn popularity(consensus: &Bundle, instance: &ElectionInstance) -> f64 {
    let gathered: u64 = consensus
        .project_ids
        .iter()
        .filter_map(|id| instance.project(id))
        .map(|p| p.vote_count)
        .sum();
    let mut counts: Vec<u64> = instance.projects.iter().map(|p| p.vote_count).collect();
    counts.sort_unstable_by(|a, b| b.cmp(a));
    let best: u64 = counts.iter().take(consensus.size()).sum();
    if best == 0 {
        1.0
    } else {
        gathered as f64 / best as f64
    }
}

/// Consensus cost over the total available budget.
pub fn budget_utilization(consensus: &Bundle, instance: &ElectionInstance) -> f64 {
    consensus.total_cost as f64 / instance.budget as f64
}

/// Assembles the full report for one converged run.
pub fn build_report(
    agents: &[AgentState],
    space: &ActionSpace,
    consensus: &Bundle,
    instance: &ElectionInstance,
    rule_overlaps: BTreeMap<String, f64>,
    basis: CompromiseBasis,
) -> MetricsReport {
    let (mean_compromise, per_agent) = compromise_cost(agents, space, consensus, basis);
    MetricsReport {
        compromise_cost: mean_compromise,
        unfairness: unfairness(&per_agent),
        popularity: popularity(consensus, instance),
        budget_utilization: budget_utilization(consensus, instance),
        per_agent_compromise: per_agent,
        rule_overlaps,
        compromise_basis: basis,
        popularity_normalization: POPULARITY_NORMALIZATION,
    }
}
