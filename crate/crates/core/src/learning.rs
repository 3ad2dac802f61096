//! Stateless Q-learning agents with gossip-augmented updates.
//!
//! Each agent holds one Q-value per bundle of the shared action space,
//! initialized to the deterministic bundle rewards. Per iteration agents
//! exchange their best bundle and its value over a fresh gossip graph,
//! update the Q-value of their currently selected bundle with
//! `Q += alpha * (r + delta * (m - Q))` where `m` is the best communicated
//! value, then re-select with an epsilon-greedy policy. A run converges when
//! every agent's greedy argmax has pointed at the same bundle for a full
//! stability window.

use std::collections::{BTreeMap, VecDeque};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bundles::{self, ActionSpace, Bundle};
use crate::gossip::{self, BundleMessage, GossipError};
use crate::pabulib::{Ballot, DistrictHistory, ElectionInstance};
use crate::rewards::{self, CostTerm, RewardError, RewardTable};
use crate::seeds;

#[derive(Debug, Error)]
pub enum LearnError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("instance has no ballots to bind agents to")]
    EmptyBallotPool,
    #[error("action space is empty")]
    EmptySpace,
    #[error(transparent)]
    Gossip(#[from] GossipError),
    #[error(transparent)]
    Reward(#[from] RewardError),
    #[error("non-finite Q-value for agent {agent}, bundle {bundle}")]
    NonFiniteQ { agent: usize, bundle: usize },
}

/// One voter-agent: its original ballot, its initial best-overlap bundle,
/// and a Q-value per bundle of the shared action space.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentState {
    pub id: usize,
    pub ballot: Ballot,
    /// Best-overlap assignment from the first iteration; immutable afterwards.
    pub initial_bundle: usize,
    pub q_values: Vec<f64>,
    pub current_selection: usize,
}

impl AgentState {
    /// Index of the highest Q-value; ties break to the canonically earlier
    /// (lower-index) bundle.
    pub fn greedy_argmax(&self) -> usize {
        let mut best = 0;
        for (i, &q) in self.q_values.iter().enumerate().skip(1) {
            if q > self.q_values[best] {
                best = i;
            }
        }
        best
    }
}

/// Learning-rate and exploration schedule parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearningConfig {
    /// Q-learning rate.
    pub alpha: f64,
    /// Learning rate for communicated rewards.
    pub delta: f64,
    /// Discount factor; fixed at zero (no future-reward bootstrapping).
    pub gamma: f64,
    /// Initial exploration probability.
    pub epsilon0: f64,
    /// Exponential decay rate of epsilon per iteration.
    pub epsilon_decay: f64,
    /// Exploration floor.
    pub epsilon_min: f64,
    pub max_iterations: usize,
    /// Consecutive unanimous iterations required for consensus.
    pub stability_window: usize,
    pub seed: u64,
}

impl Default for LearningConfig {
    fn default() -> Self {
        LearningConfig {
            alpha: 0.1,
            delta: 0.1,
            gamma: 0.0,
            epsilon0: 1.0,
            epsilon_decay: 0.1,
            epsilon_min: 0.01,
            max_iterations: 2000,
            stability_window: 10,
            seed: 0,
        }
    }
}

impl LearningConfig {
    pub fn validate(&self) -> Result<(), LearnError> {
        let check = |ok: bool, msg: &str| {
            if ok {
                Ok(())
            } else {
                Err(LearnError::InvalidConfig(msg.to_string()))
            }
        };
        check(
            self.alpha > 0.0 && self.alpha <= 1.0,
            "alpha must be in (0, 1]",
        )?;
        check(
            self.delta > 0.0 && self.delta <= 1.0,
            "delta must be in (0, 1]",
        )?;
        check(self.gamma == 0.0, "gamma is fixed at 0")?;
        check(
            self.epsilon0 > 0.0 && self.epsilon0 <= 1.0,
            "epsilon0 must be in (0, 1]",
        )?;
        check(
            self.epsilon_min >= 0.0 && self.epsilon_min <= self.epsilon0,
            "epsilon_min must be in [0, epsilon0]",
        )?;
        check(self.epsilon_decay >= 0.0, "epsilon_decay must be >= 0")?;
        check(self.max_iterations >= 1, "max_iterations must be >= 1")?;
        check(self.stability_window >= 1, "stability_window must be >= 1")?;
        Ok(())
    }

    /// Exploration probability at iteration `t` (1-based):
    /// `max(epsilon_min, epsilon0 * exp(-epsilon_decay * t))`.
    pub fn epsilon_at(&self, iteration: usize) -> f64 {
        let decayed = self.epsilon0 * (-self.epsilon_decay * iteration as f64).exp();
        decayed.max(self.epsilon_min)
    }
}

/// Full configuration of one simulation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationConfig {
    pub n_agents: usize,
    pub in_degree: usize,
    pub learning: LearningConfig,
    pub cost_term: CostTerm,
    /// Record a per-iteration histogram of selected bundles.
    pub record_trajectory: bool,
}

impl SimulationConfig {
    pub fn new(n_agents: usize, in_degree: usize, learning: LearningConfig) -> Self {
        SimulationConfig {
            n_agents,
            in_degree,
            learning,
            cost_term: CostTerm::Reward,
            record_trajectory: false,
        }
    }

    pub fn validate(&self) -> Result<(), LearnError> {
        self.learning.validate()?;
        if self.n_agents < 2 {
            return Err(LearnError::InvalidConfig(
                "at least 2 agents are required".into(),
            ));
        }
        if self.in_degree == 0 || self.in_degree > self.n_agents - 1 {
            return Err(LearnError::InvalidConfig(format!(
                "in_degree {} out of range 1..={}",
                self.in_degree,
                self.n_agents - 1
            )));
        }
        Ok(())
    }
}

/// Outcome of one simulation run.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulationResult {
    pub converged: bool,
    /// Iterations executed; equals `max_iterations` when not converged.
    pub iterations: usize,
    pub consensus_index: Option<usize>,
    pub consensus: Option<Bundle>,
    pub stability_window: usize,
    /// Final agent states, including each agent's immutable initial bundle.
    pub agents: Vec<AgentState>,
    /// Per-agent greedy argmax of the last `stability_window` iterations;
    /// empty unless converged.
    pub final_window_argmax: Vec<Vec<usize>>,
    /// Selection histograms per iteration, when recording was requested.
    pub trajectory: Option<Vec<BTreeMap<usize, usize>>>,
}

impl SimulationResult {
    /// Map agent id to its initial best-overlap bundle index.
    pub fn per_agent_initial(&self) -> BTreeMap<usize, usize> {
        self.agents.iter().map(|a| (a.id, a.initial_bundle)).collect()
    }

    /// Replays the recorded final window: a reported consensus is sound iff
    /// every agent's argmax equaled it on each of the window's iterations.
    pub fn replay_confirms_consensus(&self) -> bool {
        match (self.converged, self.consensus_index) {
            (true, Some(bundle)) => {
                self.final_window_argmax.len() == self.stability_window
                    && self
                        .final_window_argmax
                        .iter()
                        .all(|row| row.iter().all(|&a| a == bundle))
            }
            (false, None) => true,
            _ => false,
        }
    }
}

/// Binds agents to ballots and initializes Q-values to the deterministic
/// bundle rewards. Ballots are sampled without replacement while agents fit
/// the ballot pool, with replacement otherwise; each agent starts on the
/// bundle with the highest overlap to its ballot.
pub fn initialize_agents(
    instance: &ElectionInstance,
    space: &ActionSpace,
    table: &RewardTable,
    n_agents: usize,
    rng: &mut impl Rng,
) -> Result<Vec<AgentState>, LearnError> {
    if instance.ballots.is_empty() {
        return Err(LearnError::EmptyBallotPool);
    }
    if space.is_empty() {
        return Err(LearnError::EmptySpace);
    }
    let pool = instance.ballots.len();
    let picks: Vec<usize> = if n_agents <= pool {
        rand::seq::index::sample(rng, pool, n_agents).into_vec()
    } else {
        (0..n_agents).map(|_| rng.random_range(0..pool)).collect()
    };
    let q0: Vec<f64> = (0..space.len()).map(|i| table.bundle(i)).collect();
    picks
        .into_iter()
        .enumerate()
        .map(|(id, ballot_idx)| {
            let ballot = instance.ballots[ballot_idx].clone();
            let initial = bundles::best_overlap_index(&ballot, space)
                .map_err(|_| LearnError::EmptySpace)?;
            Ok(AgentState {
                id,
                ballot,
                initial_bundle: initial,
                q_values: q0.clone(),
                current_selection: initial,
            })
        })
        .collect()
}

/// One stateless Q-update of the currently selected bundle:
/// `Q += alpha * (r + delta * (m - Q))` with `m` the best communicated value
/// (the communication term vanishes on an empty inbox). No other entry
/// changes.
pub fn q_update(
    agent: &mut AgentState,
    deterministic_reward: f64,
    inbox: &[BundleMessage],
    cfg: &LearningConfig,
) {
    let q = agent.q_values[agent.current_selection];
    let m = inbox
        .iter()
        .map(|msg| msg.value)
        .fold(f64::NEG_INFINITY, f64::max);
    let m = if inbox.is_empty() { q } else { m };
    agent.q_values[agent.current_selection] =
        q + cfg.alpha * (deterministic_reward + cfg.delta * (m - q));
}

/// Epsilon-greedy selection over the shared space; updates and returns the
/// agent's current selection.
pub fn select_action(agent: &mut AgentState, epsilon: f64, rng: &mut impl Rng) -> usize {
    debug_assert!((0.0..=1.0).contains(&epsilon));
    let selection = if rng.random::<f64>() < epsilon {
        rng.random_range(0..agent.q_values.len())
    } else {
        agent.greedy_argmax()
    };
    agent.current_selection = selection;
    selection
}

/// Unanimous greedy argmax across agents, if any.
pub fn unanimous_argmax(agents: &[AgentState]) -> Option<usize> {
    let first = agents.first()?.greedy_argmax();
    agents[1..]
        .iter()
        .all(|a| a.greedy_argmax() == first)
        .then_some(first)
}

/// Tracks consecutive unanimous iterations; consensus requires the same
/// bundle to be everybody's argmax for a full window.
#[derive(Debug, Clone)]
pub struct ConsensusTracker {
    window: usize,
    streak: Option<(usize, usize)>,
}

impl ConsensusTracker {
    pub fn new(window: usize) -> Self {
        ConsensusTracker {
            window,
            streak: None,
        }
    }

    /// Records one iteration's per-agent argmax row; returns the consensus
    /// bundle once the streak fills the window.
    pub fn record(&mut self, argmax_row: &[usize]) -> Option<usize> {
        let unanimous = match argmax_row.first() {
            Some(&first) if argmax_row.iter().all(|&a| a == first) => Some(first),
            _ => None,
        };
        self.streak = match (unanimous, self.streak) {
            (Some(b), Some((prev, len))) if b == prev => Some((b, len + 1)),
            (Some(b), _) => Some((b, 1)),
            (None, _) => None,
        };
        match self.streak {
            Some((b, len)) if len >= self.window => Some(b),
            _ => None,
        }
    }
}

/// Runs the full learning loop: reward-table construction, per-iteration
/// gossip exchange, Q-updates and epsilon-greedy re-selection, stopping at
/// consensus or `max_iterations`. Non-convergence is a valid result, not an
/// error. Deterministic in the configured seed: the gossip stream, ballot
/// binding and every per-agent stream derive from it.
pub fn run_simulation(
    instance: &ElectionInstance,
    history: &DistrictHistory,
    space: &ActionSpace,
    cfg: &SimulationConfig,
) -> Result<SimulationResult, LearnError> {
    cfg.validate()?;
    if space.is_empty() {
        return Err(LearnError::EmptySpace);
    }
    let attrs = rewards::attribute_frequencies(history)?;
    let table = rewards::build_reward_table_with(space, &attrs, instance, cfg.cost_term);
    let seed = cfg.learning.seed;

    let mut ballot_rng = seeds::derived_rng(seed, "ballots", &[]);
    let mut gossip_rng = seeds::derived_rng(seed, "gossip", &[]);
    let mut agents = initialize_agents(instance, space, &table, cfg.n_agents, &mut ballot_rng)?;
    let mut agent_rngs: Vec<ChaCha8Rng> = (0..cfg.n_agents)
        .map(|i| seeds::derived_rng(seed, "agent", &[i as u64]))
        .collect();

    let window = cfg.learning.stability_window;
    let mut tracker = ConsensusTracker::new(window);
    let mut recent_rows: VecDeque<Vec<usize>> = VecDeque::with_capacity(window + 1);
    let mut trajectory: Option<Vec<BTreeMap<usize, usize>>> =
        cfg.record_trajectory.then(Vec::new);

    let mut converged = false;
    let mut consensus_index = None;
    let mut iterations = 0;
    for t in 1..=cfg.learning.max_iterations {
        iterations = t;
        let epsilon = cfg.learning.epsilon_at(t);
        let views = gossip::resample_views(cfg.n_agents, cfg.in_degree, &mut gossip_rng)?;
        let inboxes = gossip::exchange(&views, &agents);
        for (agent, inbox) in agents.iter_mut().zip(&inboxes) {
            let r = table.bundle(agent.current_selection);
            q_update(agent, r, inbox, &cfg.learning);
        }
        for (agent, rng) in agents.iter_mut().zip(agent_rngs.iter_mut()) {
            select_action(agent, epsilon, rng);
        }
        if let Some(traj) = trajectory.as_mut() {
            let mut histogram: BTreeMap<usize, usize> = BTreeMap::new();
            for a in &agents {
                *histogram.entry(a.current_selection).or_insert(0) += 1;
            }
            traj.push(histogram);
        }

        let row: Vec<usize> = agents.iter().map(AgentState::greedy_argmax).collect();
        if recent_rows.len() == window {
            recent_rows.pop_front();
        }
        recent_rows.push_back(row.clone());
        if let Some(bundle) = tracker.record(&row) {
            converged = true;
            consensus_index = Some(bundle);
            break;
        }
    }

    for agent in &agents {
        for (bundle, q) in agent.q_values.iter().enumerate() {
            if !q.is_finite() {
                return Err(LearnError::NonFiniteQ {
                    agent: agent.id,
                    bundle,
                });
            }
        }
    }

    Ok(SimulationResult {
        converged,
        iterations,
        consensus_index,
        consensus: consensus_index.map(|i| space.bundles[i].clone()),
        stability_window: window,
        agents,
        final_window_argmax: if converged {
            recent_rows.into_iter().collect()
        } else {
            Vec::new()
        },
        trajectory,
    })
}
