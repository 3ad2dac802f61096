//! Deterministic rewards from multi-year attribute frequencies.
//!
//! For each year of a district's history, every attribute tag gets a share of
//! the year's attribute occurrences among listed projects, plus a share among
//! that year's winning projects. These shares, summed over all years, score
//! attributes; a project's reward squashes its attribute score through a
//! logistic and adds a `tanh(cost/budget)` cost term; a bundle's reward is
//! the sum of its members'.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bundles::ActionSpace;
use crate::pabulib::{DistrictHistory, ElectionInstance, Money, Project};

#[derive(Debug, Error)]
pub enum RewardError {
    #[error("district history has no instances")]
    EmptyHistory,
}

/// How the cost term enters a project's reward. The literal formula rewards
/// expensive projects; `Penalty` negates the term for sensitivity studies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CostTerm {
    #[default]
    Reward,
    Penalty,
}

/// Per-attribute scores accumulated over a district history.
#[derive(Debug, Clone, PartialEq)]
pub struct AttributeRewards {
    /// Every attribute appearing in any project of the history has an entry.
    pub per_attribute: BTreeMap<String, f64>,
    pub years_used: usize,
}

impl AttributeRewards {
    /// Score of one attribute; attributes never seen score 0.
    pub fn score(&self, attribute: &str) -> f64 {
        self.per_attribute.get(attribute).copied().unwrap_or(0.0)
    }
}

/// Deterministic reward per project and per bundle of one action space.
#[derive(Debug, Clone, PartialEq)]
pub struct RewardTable {
    pub per_project: BTreeMap<String, f64>,
    per_bundle: Vec<f64>,
}

impl RewardTable {
    pub fn project(&self, id: &str) -> f64 {
        self.per_project.get(id).copied().unwrap_or(0.0)
    }

    /// Reward of the bundle at `index` in the action space the table was
    /// built for.
    pub fn bundle(&self, index: usize) -> f64 {
        self.per_bundle[index]
    }

    pub fn bundle_rewards(&self) -> &[f64] {
        &self.per_bundle
    }

    pub fn max_bundle_reward(&self) -> f64 {
        self.per_bundle.iter().copied().fold(f64::MIN, f64::max)
    }
}

/// One year's normalized attribute shares: each listed project contributes
/// one occurrence per attribute tag; shares are occurrences divided by the
/// year's total occurrences. Returned as (listed, selected); the selected
/// map is all zeros when the year has no recorded winners.
pub fn year_attribute_shares(
    instance: &ElectionInstance,
) -> (BTreeMap<String, f64>, BTreeMap<String, f64>) {
    let share = |projects: &[&Project]| -> BTreeMap<String, f64> {
        let mut counts: BTreeMap<&str, u64> = BTreeMap::new();
        let mut total = 0u64;
        for p in projects {
            for a in &p.attributes {
                *counts.entry(a).or_insert(0) += 1;
                total += 1;
            }
        }
        counts
            .into_iter()
            .map(|(a, c)| (a.to_string(), c as f64 / total as f64))
            .collect()
    };
    let listed: Vec<&Project> = instance.projects.iter().collect();
    let selected: Vec<&Project> = instance.projects.iter().filter(|p| p.selected).collect();
    (share(&listed), share(&selected))
}

/// Sums each attribute's listed and selected shares over every year of the
/// history. Attributes never tagged anywhere get an explicit 0 entry.
pub fn attribute_frequencies(history: &DistrictHistory) -> Result<AttributeRewards, RewardError> {
    if history.instances.is_empty() {
        return Err(RewardError::EmptyHistory);
    }
    let mut per_attribute: BTreeMap<String, f64> = history
        .instances
        .iter()
        .flat_map(|i| i.projects.iter())
        .flat_map(|p| p.attributes.iter().cloned())
        .map(|a| (a, 0.0))
        .collect();
    for instance in &history.instances {
        let (listed, selected) = year_attribute_shares(instance);
        for (a, share) in listed.into_iter().chain(selected) {
            *per_attribute.entry(a).or_insert(0.0) += share;
        }
    }
    Ok(AttributeRewards {
        per_attribute,
        years_used: history.instances.len(),
    })
}

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Reward of one project: `logistic(sum of attribute scores) + tanh(cost/budget)`.
pub fn project_reward(project: &Project, attrs: &AttributeRewards, budget: Money) -> f64 {
    project_reward_with(project, attrs, budget, CostTerm::Reward)
}

/// As [`project_reward`] with an explicit cost-term sign.
pub fn project_reward_with(
    project: &Project,
    attrs: &AttributeRewards,
    budget: Money,
    cost_term: CostTerm,
) -> f64 {
    let attribute_sum: f64 = project.attributes.iter().map(|a| attrs.score(a)).sum();
    let cost = (project.cost as f64 / budget as f64).tanh();
    let cost = match cost_term {
        CostTerm::Reward => cost,
        CostTerm::Penalty => -cost,
    };
    logistic(attribute_sum) + cost
}

/// Builds the reward table for an action space: per-project rewards for
/// every project appearing in the space, per-bundle rewards as member sums.
pub fn build_reward_table(
    space: &ActionSpace,
    attrs: &AttributeRewards,
    instance: &ElectionInstance,
) -> RewardTable {
    build_reward_table_with(space, attrs, instance, CostTerm::Reward)
}

/// As [`build_reward_table`] with an explicit cost-term sign.
pub fn build_reward_table_with(
    space: &ActionSpace,
    attrs: &AttributeRewards,
    instance: &ElectionInstance,
    cost_term: CostTerm,
) -> RewardTable {
    let referenced: BTreeSet<&String> = space
        .bundles
        .iter()
        .flat_map(|b| b.project_ids.iter())
        .collect();
    let per_project: BTreeMap<String, f64> = instance
        .projects
        .iter()
        .filter(|p| referenced.contains(&p.id))
        .map(|p| {
            (
                p.id.clone(),
                project_reward_with(p, attrs, instance.budget, cost_term),
            )
        })
        .collect();
    let per_bundle = space
        .bundles
        .iter()
        .map(|b| b.project_ids.iter().map(|id| per_project[id]).sum())
        .collect();
    RewardTable {
        per_project,
        per_bundle,
    }
}
