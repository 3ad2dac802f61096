//! Knapsack-feasible project bundles and sampled action spaces.
//!
//! A bundle is a non-empty subset of projects whose total cost fits the
//! budget. Bundles are kept in a canonical order (lexicographic by sorted
//! member ids) which fixes every downstream tie-break and makes seeded
//! experiments reproducible.

use std::collections::BTreeSet;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::pabulib::{Ballot, Money, Project};

/// Largest number of potential subsets (2^n - 1) enumerated by default.
pub const DEFAULT_ENUMERATION_CAP: u64 = 1 << 22;

#[derive(Debug, Error)]
pub enum BundleError {
    #[error(
        "{projects} projects yield up to {potential} subsets, over the enumeration cap of {cap}; pre-filter the project list"
    )]
    TooManyProjects {
        projects: usize,
        potential: u128,
        cap: u64,
    },
    #[error("requested a sample of {requested} bundles but only {available} exist")]
    SampleTooLarge { requested: usize, available: usize },
    #[error("sample size must be at least 1")]
    EmptySample,
    #[error("action space is empty")]
    EmptySpace,
}

/// A feasible subset of projects; one action in the bandit formulation.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Bundle {
    /// Member project ids. `BTreeSet` ordering makes the derived `Ord`
    /// exactly the canonical bundle order.
    pub project_ids: BTreeSet<String>,
    pub total_cost: Money,
}

impl Bundle {
    pub fn new(project_ids: BTreeSet<String>, total_cost: Money) -> Self {
        debug_assert!(!project_ids.is_empty());
        Bundle {
            project_ids,
            total_cost,
        }
    }

    pub fn size(&self) -> usize {
        self.project_ids.len()
    }
}

/// The set of bundles every agent chooses from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionSpace {
    /// Distinct bundles in canonical order.
    pub bundles: Vec<Bundle>,
    /// Seed used when the space is a random sample; `None` when exhaustive.
    pub source_seed: Option<u64>,
}

impl ActionSpace {
    /// Wraps a full enumeration (no sampling).
    pub fn exhaustive(bundles: Vec<Bundle>) -> Self {
        ActionSpace {
            bundles,
            source_seed: None,
        }
    }

    pub fn len(&self) -> usize {
        self.bundles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bundles.is_empty()
    }

    pub fn get(&self, index: usize) -> &Bundle {
        &self.bundles[index]
    }
}

/// Enumerates every non-empty subset of `projects` whose total cost is
/// within `budget`, in canonical order, with the default enumeration cap.
pub fn enumerate_valid_bundles(
    projects: &[Project],
    budget: Money,
) -> Result<Vec<Bundle>, BundleError> {
    enumerate_valid_bundles_capped(projects, budget, DEFAULT_ENUMERATION_CAP)
}

/// As [`enumerate_valid_bundles`] with an explicit cap on 2^n - 1. The cap
/// fails loudly instead of truncating: callers with oversized project lists
/// must pre-filter.
pub fn enumerate_valid_bundles_capped(
    projects: &[Project],
    budget: Money,
    cap: u64,
) -> Result<Vec<Bundle>, BundleError> {
    let n = projects.len();
    let potential: u128 = if n >= 128 {
        u128::MAX
    } else {
        (1u128 << n) - 1
    };
    if potential > cap as u128 {
        return Err(BundleError::TooManyProjects {
            projects: n,
            potential,
            cap,
        });
    }

    let mut sorted: Vec<&Project> = projects.iter().collect();
    sorted.sort_by(|a, b| a.id.cmp(&b.id));

    // Depth-first extension over id-sorted projects emits subsets directly
    // in canonical (lexicographic) order; any branch over budget is pruned
    // together with all of its supersets.
    let mut out = Vec::new();
    let mut stack: Vec<String> = Vec::new();
    fn extend(
        sorted: &[&Project],
        start: usize,
        cost_so_far: Money,
        budget: Money,
        stack: &mut Vec<String>,
        out: &mut Vec<Bundle>,
    ) {
        for i in start..sorted.len() {
            let Some(cost) = cost_so_far.checked_add(sorted[i].cost) else {
                continue;
            };
            if cost > budget {
                continue;
            }
            stack.push(sorted[i].id.clone());
            out.push(Bundle::new(stack.iter().cloned().collect(), cost));
            extend(sorted, i + 1, cost, budget, stack, out);
            stack.pop();
        }
    }
    extend(&sorted, 0, 0, budget, &mut stack, &mut out);
    Ok(out)
}

/// Uniform sample without replacement of `k` bundles, deterministic for a
/// given seed. Canonical ordering of the input is preserved in the sample.
pub fn sample_action_space(
    bundles: &[Bundle],
    k: usize,
    seed: u64,
) -> Result<ActionSpace, BundleError> {
    if k == 0 {
        return Err(BundleError::EmptySample);
    }
    if k > bundles.len() {
        return Err(BundleError::SampleTooLarge {
            requested: k,
            available: bundles.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked: Vec<usize> = rand::seq::index::sample(&mut rng, bundles.len(), k).into_vec();
    picked.sort_unstable();
    Ok(ActionSpace {
        bundles: picked.into_iter().map(|i| bundles[i].clone()).collect(),
        source_seed: Some(seed),
    })
}

/// Jaccard index of two id sets; 1.0 when both are empty.
pub fn jaccard(a: &BTreeSet<String>, b: &BTreeSet<String>) -> f64 {
    if a.is_empty() && b.is_empty() {
        return 1.0;
    }
    let inter = a.intersection(b).count() as f64;
    let union = a.union(b).count() as f64;
    inter / union
}

/// Index of the bundle with the highest Jaccard overlap against the ballot.
/// Ties break to the lower total cost, then to canonical order.
pub fn best_overlap_index(ballot: &Ballot, space: &ActionSpace) -> Result<usize, BundleError> {
    if space.is_empty() {
        return Err(BundleError::EmptySpace);
    }
    // Overlaps are compared as exact ratios so float rounding can never
    // reorder a tie-break.
    let score = |bundle: &Bundle| -> (u64, u64) {
        let inter = ballot.approved.intersection(&bundle.project_ids).count() as u64;
        let union = ballot.approved.union(&bundle.project_ids).count() as u64;
        (inter, union)
    };
    let mut best = 0usize;
    let (mut best_i, mut best_u) = score(&space.bundles[0]);
    for (idx, bundle) in space.bundles.iter().enumerate().skip(1) {
        let (i, u) = score(bundle);
        // i/u > best_i/best_u  <=>  i*best_u > best_i*u  (u, best_u >= 1)
        let better = i * best_u > best_i * u
            || (i * best_u == best_i * u && bundle.total_cost < space.bundles[best].total_cost);
        if better {
            best = idx;
            best_i = i;
            best_u = u;
        }
    }
    Ok(best)
}

/// See [`best_overlap_index`]; returns the bundle itself.
pub fn best_overlap_bundle<'a>(
    ballot: &Ballot,
    space: &'a ActionSpace,
) -> Result<&'a Bundle, BundleError> {
    best_overlap_index(ballot, space).map(|i| &space.bundles[i])
}
