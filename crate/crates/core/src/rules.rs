//! Baseline multi-winner aggregation rules.
//!
//! Three rules score an election for comparison against the learned
//! consensus bundle: utilitarian greedy, the money-earning sequential
//! Phragmen rule, and the method of equal shares with Phragmen completion.
//! Selection decisions (purchase times, payment levels) are computed in
//! exact rational arithmetic so ties and thresholds are reproducible; ties
//! always break to the canonical (lexicographically smaller) project id.

use std::collections::{BTreeMap, BTreeSet};

use num::{BigInt, BigRational, ToPrimitive, Zero};
use serde::Serialize;
use thiserror::Error;

use crate::pabulib::{ElectionInstance, Money, Project};

pub type Rational = BigRational;

#[derive(Debug, Error)]
pub enum RuleError {
    #[error("the method of equal shares needs at least one ballot")]
    NoBallots,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Rule {
    UtilitarianGreedy,
    SequentialPhragmen,
    EqualShares,
}

impl Rule {
    /// Stable name used in reports; the Phragmen entry names the variant
    /// explicitly since load-balancing formulations differ on budget data.
    pub fn name(&self) -> &'static str {
        match self {
            Rule::UtilitarianGreedy => "utilitarian_greedy",
            Rule::SequentialPhragmen => "sequential_phragmen_money_earning",
            Rule::EqualShares => "equal_shares_phragmen_completion",
        }
    }
}

/// One selection step of a rule's run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AuditEntry {
    pub project: String,
    /// Decision quantity at selection time: approval count (greedy),
    /// purchase time (Phragmen), payment per unit of cost (equal shares).
    pub quantity: f64,
    /// Exact rational form of `quantity`.
    pub quantity_exact: String,
    /// True for winners added by the completion phase of equal shares.
    pub completion: bool,
}

/// Winner set plus the ordered selection log that produced it.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RuleOutcome {
    pub rule: Rule,
    pub winners: BTreeSet<String>,
    pub total_cost: Money,
    pub audit: Vec<AuditEntry>,
}

fn rat(x: Money) -> Rational {
    BigRational::from_integer(BigInt::from(x))
}

fn rat_usize(x: usize) -> Rational {
    BigRational::from_integer(BigInt::from(x))
}

fn audit_entry(project: &str, quantity: &Rational, completion: bool) -> AuditEntry {
    AuditEntry {
        project: project.to_string(),
        quantity: quantity.to_f64().unwrap_or(f64::NAN),
        quantity_exact: quantity.to_string(),
        completion,
    }
}

/// Voter indices approving each project, in canonical project order.
fn approver_index(instance: &ElectionInstance) -> BTreeMap<&str, Vec<usize>> {
    let mut index: BTreeMap<&str, Vec<usize>> =
        instance.projects.iter().map(|p| (p.id.as_str(), Vec::new())).collect();
    for (voter, ballot) in instance.ballots.iter().enumerate() {
        for id in &ballot.approved {
            if let Some(approvers) = index.get_mut(id.as_str()) {
                approvers.push(voter);
            }
        }
    }
    index
}

/// Selects projects in descending approval order (ties: lower cost, then
/// canonical id), adding each project iff it fits the remaining budget, and
/// scans the whole list.
pub fn utilitarian_greedy(instance: &ElectionInstance) -> RuleOutcome {
    let mut order: Vec<&Project> = instance.projects.iter().collect();
    order.sort_by(|a, b| {
        b.vote_count
            .cmp(&a.vote_count)
            .then(a.cost.cmp(&b.cost))
            .then(a.id.cmp(&b.id))
    });
    let mut winners = BTreeSet::new();
    let mut audit = Vec::new();
    let mut remaining = instance.budget;
    for p in order {
        if p.cost <= remaining {
            remaining -= p.cost;
            winners.insert(p.id.clone());
            audit.push(audit_entry(&p.id, &rat(p.vote_count), false));
        }
    }
    RuleOutcome {
        rule: Rule::UtilitarianGreedy,
        total_cost: instance.budget - remaining,
        winners,
        audit,
    }
}

/// Money-earning sequential Phragmen: every voter accrues virtual currency
/// at unit rate; a project is bought at the earliest time its approvers'
/// combined balances reach its cost, unless its cost exceeds the remaining
/// real budget, in which case it is skipped for good. Purchasers' balances
/// reset to zero.
pub fn sequential_phragmen(
    instance: &ElectionInstance,
    budget_override: Option<Money>,
) -> RuleOutcome {
    let budget = budget_override.unwrap_or(instance.budget);
    let purchases = phragmen_run(instance, budget, &BTreeSet::new());
    let total_cost = purchases.iter().map(|(id, _)| instance.project(id).unwrap().cost).sum();
    RuleOutcome {
        rule: Rule::SequentialPhragmen,
        winners: purchases.iter().map(|(id, _)| id.clone()).collect(),
        total_cost,
        audit: purchases
            .iter()
            .map(|(id, time)| audit_entry(id, time, false))
            .collect(),
    }
}

/// Runs the continuous money-earning process over the projects not in
/// `excluded`, returning purchases as (project id, purchase time) in
/// selection order.
fn phragmen_run(
    instance: &ElectionInstance,
    budget: Money,
    excluded: &BTreeSet<String>,
) -> Vec<(String, Rational)> {
    let approvers = approver_index(instance);
    let mut balances = vec![Rational::zero(); instance.ballots.len()];
    let mut now = Rational::zero();
    let mut remaining = budget;
    let mut open: Vec<&Project> = instance
        .projects
        .iter()
        .filter(|p| !excluded.contains(&p.id) && !approvers[p.id.as_str()].is_empty())
        .collect();
    open.sort_by(|a, b| a.id.cmp(&b.id));

    let mut purchases = Vec::new();
    while !open.is_empty() {
        // Earliest affordable-by-supporters purchase; canonical id on ties.
        let mut best: Option<(Rational, usize)> = None;
        for (pos, p) in open.iter().enumerate() {
            let supporters = &approvers[p.id.as_str()];
            let held: Rational = supporters.iter().map(|&v| balances[v].clone()).sum();
            let need = rat(p.cost) - held;
            let time = if need <= Rational::zero() {
                now.clone()
            } else {
                &now + need / rat_usize(supporters.len())
            };
            if best.as_ref().is_none_or(|(t, _)| time < *t) {
                best = Some((time, pos));
            }
        }
        let (time, pos) = best.expect("open list is non-empty");
        let project = open.remove(pos);
        if project.cost > remaining {
            // costs more than the money actually left: skipped for good
            continue;
        }
        let elapsed = &time - &now;
        for balance in &mut balances {
            *balance += &elapsed;
        }
        now = time;
        for &v in &approvers[project.id.as_str()] {
            balances[v] = Rational::zero();
        }
        remaining -= project.cost;
        purchases.push((project.id.clone(), now.clone()));
    }
    purchases
}

/// Equal per-supporter payment `x` solving `sum(min(balance_v, x)) = cost`,
/// or `None` when the supporters cannot afford the cost at all.
fn equal_split_payment(cost: Money, mut balances: Vec<Rational>) -> Option<Rational> {
    let total: Rational = balances.iter().cloned().sum();
    if total < rat(cost) {
        return None;
    }
    if cost == 0 {
        return Some(Rational::zero());
    }
    balances.sort();
    let k = balances.len();
    let mut paid_in_full = Rational::zero();
    for (i, cap) in balances.iter().enumerate() {
        // voters before i pay their whole balance, the rest pay x
        let x = (rat(cost) - &paid_in_full) / rat_usize(k - i);
        if x <= *cap {
            return Some(x);
        }
        paid_in_full += cap;
    }
    unreachable!("supporters hold at least the cost, so a payment level exists")
}

/// Method of equal shares with Phragmen completion. Every voter is endowed
/// `budget / n`; each round selects the affordable project whose
/// equal-split-capped-by-balance payment is smallest per unit of cost, and
/// charges its approvers. When nothing is affordable, the unspent budget is
/// handed to sequential Phragmen over the unselected projects.
pub fn method_of_equal_shares(instance: &ElectionInstance) -> Result<RuleOutcome, RuleError> {
    method_of_equal_shares_with_payments(instance).map(|(outcome, _)| outcome)
}

/// As [`method_of_equal_shares`], also returning the total phase-one payment
/// charged to each voter.
pub fn method_of_equal_shares_with_payments(
    instance: &ElectionInstance,
) -> Result<(RuleOutcome, Vec<Rational>), RuleError> {
    if instance.ballots.is_empty() {
        return Err(RuleError::NoBallots);
    }
    let approvers = approver_index(instance);
    let n = instance.ballots.len();
    let endowment = rat(instance.budget) / rat_usize(n);
    let mut balances = vec![endowment; n];
    let mut payments = vec![Rational::zero(); n];

    let mut open: Vec<&Project> = instance
        .projects
        .iter()
        .filter(|p| !approvers[p.id.as_str()].is_empty())
        .collect();
    open.sort_by(|a, b| a.id.cmp(&b.id));

    let mut winners = BTreeSet::new();
    let mut audit = Vec::new();
    let mut total_cost: Money = 0;
    loop {
        // cheapest per-unit-cost payment level among affordable projects
        let mut best: Option<(Rational, Rational, usize)> = None;
        for (pos, p) in open.iter().enumerate() {
            let supporters = &approvers[p.id.as_str()];
            let held: Vec<Rational> = supporters.iter().map(|&v| balances[v].clone()).collect();
            let Some(x) = equal_split_payment(p.cost, held) else {
                continue;
            };
            let rho = if p.cost == 0 {
                Rational::zero()
            } else {
                &x / rat(p.cost)
            };
            if best.as_ref().is_none_or(|(r, ..)| rho < *r) {
                best = Some((rho, x, pos));
            }
        }
        let Some((rho, x, pos)) = best else {
            break;
        };
        let project = open.remove(pos);
        for &v in &approvers[project.id.as_str()] {
            let pay = balances[v].clone().min(x.clone());
            balances[v] -= &pay;
            payments[v] += &pay;
        }
        winners.insert(project.id.clone());
        total_cost += project.cost;
        audit.push(audit_entry(&project.id, &rho, false));
    }

    // completion: hand the unspent budget to Phragmen over the rest
    let completion = phragmen_run(instance, instance.budget - total_cost, &winners);
    for (id, time) in completion {
        total_cost += instance.project(&id).unwrap().cost;
        audit.push(audit_entry(&id, &time, true));
        winners.insert(id);
    }

    Ok((
        RuleOutcome {
            rule: Rule::EqualShares,
            winners,
            total_cost,
            audit,
        },
        payments,
    ))
}

/// Jaccard index of two winner sets; two empty outcomes count as identical.
pub fn overlap(a: &BTreeSet<String>, b: &BTreeSet<String>) -> f64 {
    crate::bundles::jaccard(a, b)
}
