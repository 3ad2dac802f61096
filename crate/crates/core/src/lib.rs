//! Consensus-based participatory budgeting simulation.
//!
//! Voter agents learn, via gossip-augmented multi-armed-bandit Q-learning over
//! knapsack-feasible project bundles, to converge on a single winning bundle.
//! The consensus outcome is scored with legitimacy metrics and compared against
//! classical multi-winner aggregation rules (utilitarian greedy, sequential
//! Phragmen, method of equal shares).
//!
//! Module map:
//!
//! - [`pabulib`] — parse pabulib-format election files, assemble district histories
//! - [`bundles`] — enumerate knapsack-feasible bundles, sample action spaces
//! - [`rewards`] — deterministic rewards from multi-year attribute frequencies
//! - [`gossip`] — dynamic random communication graph and message exchange
//! - [`learning`] — Q-learning agents, epsilon-greedy selection, consensus detection
//! - [`rules`] — baseline multi-winner aggregation rules
//! - [`metrics`] — compromise cost, unfairness, popularity, budget utilization
//! - [`harness`] — seeded parameter sweeps, robustness studies, report emission

pub mod bundles;
pub mod gossip;
pub mod harness;
pub mod learning;
pub mod metrics;
pub mod pabulib;
pub mod rewards;
pub mod rules;
pub mod seeds;

pub use bundles::{ActionSpace, Bundle};
pub use learning::{LearningConfig, SimulationConfig, SimulationResult};
pub use pabulib::{Ballot, DistrictHistory, ElectionInstance, Money, Project};
