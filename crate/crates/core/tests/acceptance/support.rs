//! Shared fixtures and independent oracles for the acceptance suite.
//!
//! Everything here is deliberately written as a second, straightforward
//! route to the same answers: power-set filters, from-scratch rule
//! executions, and hand-rolled statistics. None of it calls the library
//! paths it is used to check.

use std::collections::{BTreeMap, BTreeSet};

use pb_consensus::bundles::Bundle;
use pb_consensus::pabulib::{Ballot, DistrictHistory, ElectionInstance, Money, Project};
use rand::prelude::*;
use rand::seq::index;
use rand_chacha::ChaCha8Rng;

// ---------------------------------------------------------------------------
// Synthetic election data
// ---------------------------------------------------------------------------

pub const ATTRIBUTE_POOL: &[(&str, f64)] = &[
    ("public space", 5.0),
    ("education", 4.0),
    ("children", 3.0),
    ("environment", 2.5),
    ("sport", 2.0),
    ("seniors", 1.5),
    ("culture", 1.0),
    ("health", 0.7),
];

fn weighted_attribute(rng: &mut ChaCha8Rng) -> String {
    let total: f64 = ATTRIBUTE_POOL.iter().map(|(_, w)| w).sum();
    let mut roll = rng.random::<f64>() * total;
    for (name, weight) in ATTRIBUTE_POOL {
        roll -= weight;
        if roll <= 0.0 {
            return name.to_string();
        }
    }
    ATTRIBUTE_POOL.last().unwrap().0.to_string()
}

pub struct DistrictSpec {
    pub name: String,
    pub n_projects: usize,
    pub n_ballots: usize,
    pub budget: Money,
    pub min_cost: Money,
    pub max_cost: Money,
    pub years: i32,
    pub approvals_per_ballot: (usize, usize),
}

impl DistrictSpec {
    pub fn small(name: &str) -> Self {
        DistrictSpec {
            name: name.to_string(),
            n_projects: 10,
            n_ballots: 120,
            budget: 1000,
            min_cost: 120,
            max_cost: 450,
            years: 4,
            approvals_per_ballot: (2, 4),
        }
    }
}

/// One synthetic election year: weighted attributes, costs uniform in the
/// configured band, ballots biased toward each voter's favorite attribute.
fn generate_instance(spec: &DistrictSpec, year: i32, rng: &mut ChaCha8Rng) -> ElectionInstance {
    let projects: Vec<Project> = (0..spec.n_projects)
        .map(|i| {
            let n_attrs = 1 + rng.random_range(0..3);
            let attributes: BTreeSet<String> =
                (0..n_attrs).map(|_| weighted_attribute(rng)).collect();
            Project {
                id: format!("p{i:02}"),
                cost: rng.random_range(spec.min_cost..=spec.max_cost),
                attributes,
                vote_count: 0,
                selected: false,
            }
        })
        .collect();

    let (lo, hi) = spec.approvals_per_ballot;
    let mut ballots = Vec::with_capacity(spec.n_ballots);
    for v in 0..spec.n_ballots {
        let favorite = weighted_attribute(rng);
        let mut weights: Vec<f64> = projects
            .iter()
            .map(|p| if p.attributes.contains(&favorite) { 4.0 } else { 1.0 })
            .collect();
        let approvals = rng.random_range(lo..=hi).min(projects.len());
        let mut approved = BTreeSet::new();
        for _ in 0..approvals {
            let total: f64 = weights.iter().sum();
            if total <= 0.0 {
                break;
            }
            let mut roll = rng.random::<f64>() * total;
            let mut pick = 0;
            for (i, w) in weights.iter().enumerate() {
                roll -= w;
                if roll <= 0.0 {
                    pick = i;
                    break;
                }
            }
            approved.insert(projects[pick].id.clone());
            weights[pick] = 0.0;
        }
        ballots.push(Ballot {
            voter_id: format!("v{v:03}"),
            approved,
        });
    }

    let mut instance = ElectionInstance {
        district: spec.name.clone(),
        year,
        budget: spec.budget,
        projects,
        ballots,
    };
    for p in &mut instance.projects {
        p.vote_count = instance
            .ballots
            .iter()
            .filter(|b| b.approved.contains(&p.id))
            .count() as u64;
    }
    // flag a greedy-style winner set as the historical record
    let mut order: Vec<usize> = (0..instance.projects.len()).collect();
    order.sort_by_key(|&i| std::cmp::Reverse(instance.projects[i].vote_count));
    let mut remaining = instance.budget;
    for i in order {
        if instance.projects[i].cost <= remaining {
            remaining -= instance.projects[i].cost;
            instance.projects[i].selected = true;
        }
    }
    instance
}

/// Multi-year history with fresh projects per year; the latest year is the
/// instance experiments run on.
pub fn synthetic_history(spec: &DistrictSpec, seed: u64) -> DistrictHistory {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let instances: Vec<ElectionInstance> = (0..spec.years)
        .map(|offset| generate_instance(spec, 2020 + offset, &mut rng))
        .collect();
    DistrictHistory {
        district: spec.name.clone(),
        instances,
    }
}

/// Hand-built project roster: (id, cost, attributes).
fn roster(rows: &[(&str, Money, &[&str])]) -> Vec<Project> {
    rows.iter()
        .map(|(id, cost, attrs)| Project {
            id: id.to_string(),
            cost: *cost,
            attributes: attrs.iter().map(|s| s.to_string()).collect(),
            vote_count: 0,
            selected: false,
        })
        .collect()
}

fn finalize(district: &str, year: i32, budget: Money, mut projects: Vec<Project>,
            ballots: Vec<Ballot>, winners: &[&str]) -> ElectionInstance {
    for p in &mut projects {
        p.vote_count = ballots.iter().filter(|b| b.approved.contains(&p.id)).count() as u64;
        p.selected = winners.contains(&p.id.as_str());
    }
    ElectionInstance {
        district: district.into(),
        year,
        budget,
        projects,
        ballots,
    }
}

/// Fixed mid-size district for the trend studies: three small projects, three
/// medium, four large, under a budget of 1000. Bundle sizes range from one to
/// three members and bundle rewards spread over a wide band with a dense top
/// region, so sparser action-space samples see larger local reward margins
/// while dense samples sit in near-ties.
pub fn trend_district() -> DistrictHistory {
    let projects = |yr: i32| {
        roster(&[
            ("s1", 170, &["education", "children"]),
            ("s2", 190, &["public space"]),
            ("s3", 210, &["education", "sport"]),
            ("m1", 500, &["environment", "public space"]),
            ("m2", 550, &["culture", "seniors"]),
            ("m3", 600, &["education"]),
            ("b1", 800, &["public space", "children"]),
            ("b2", 850, &["health"]),
            ("b3", 900, &["environment", "education"]),
            ("b4", 950, &["sport", "culture"]),
        ])
        .into_iter()
        .map(move |mut p| {
            p.id = format!("{}y{}", p.id, yr);
            p
        })
        .collect::<Vec<_>>()
    };
    let approval_patterns: &[&[&str]] = &[
        &["s1", "s2"],
        &["s1", "s3"],
        &["s2", "s3"],
        &["s1", "s2", "s3"],
        &["m1", "s1"],
        &["m1", "m2"],
        &["m2", "s3"],
        &["m3", "s2"],
        &["m1", "s2", "s3"],
        &["m3"],
        &["b1"],
        &["b1", "s1"],
        &["b2"],
        &["b3", "s2"],
        &["b4"],
        &["b3"],
        &["b4", "s3"],
        &["b1", "s3"],
        &["b2", "s1"],
        &["m2", "s2"],
    ];
    let winners_by_year: [&[&str]; 4] = [
        &["s1", "s2", "s3", "m1"],
        &["s1", "s2", "m3"],
        &["m1", "s1", "s3"],
        &["b1", "s1"],
    ];
    let instances = (0..4)
        .map(|offset| {
            let yr = 2018 + offset;
            let projects = projects(yr);
            let suffix = |ids: &[&str]| -> Vec<String> {
                ids.iter().map(|id| format!("{id}y{yr}")).collect()
            };
            let ballots: Vec<Ballot> = approval_patterns
                .iter()
                .cycle()
                .take(40)
                .enumerate()
                .map(|(v, ids)| Ballot {
                    voter_id: format!("v{v:03}"),
                    approved: suffix(ids).into_iter().collect(),
                })
                .collect();
            let winners = suffix(winners_by_year[offset as usize]);
            let winner_refs: Vec<&str> = winners.iter().map(|s| s.as_str()).collect();
            finalize("Lindow", yr, 1000, projects, ballots, &winner_refs)
        })
        .collect();
    DistrictHistory {
        district: "Lindow".into(),
        instances,
    }
}

/// Fixed 8-project district for the consensus-reachability check. Costs and
/// attributes are chosen so the four cheap projects form the single clearly
/// best bundle of the sampled action space: no other feasible combination
/// comes within a full project reward of it.
pub fn reachability_district() -> DistrictHistory {
    let projects = roster(&[
        ("c1", 200, &["education", "children", "public space"]),
        ("c2", 210, &["education", "public space", "sport"]),
        ("c3", 220, &["public space", "children", "education"]),
        ("c4", 230, &["education", "sport", "children"]),
        ("g1", 600, &["health"]),
        ("g2", 650, &["culture"]),
        ("g3", 700, &["seniors"]),
        ("g4", 750, &["environment"]),
    ]);
    let approvals: &[&[&str]] = &[
        &["c1", "c2"],
        &["c2", "c3"],
        &["c3", "c4"],
        &["c1", "c4"],
        &["c1", "c2", "c3"],
        &["g1"],
        &["g2", "c1"],
        &["g3"],
        &["g4", "c4"],
        &["g1", "c2"],
        &["c2", "c4"],
        &["c1", "c3"],
    ];
    let ballots: Vec<Ballot> = (0..36)
        .map(|v| Ballot {
            voter_id: format!("v{v:03}"),
            approved: approvals[v % approvals.len()]
                .iter()
                .map(|s| s.to_string())
                .collect(),
        })
        .collect();
    let instance = finalize(
        "Porlock",
        2021,
        1000,
        projects,
        ballots,
        &["c1", "c2", "c3", "c4"],
    );
    DistrictHistory {
        district: "Porlock".into(),
        instances: vec![instance],
    }
}

/// Small random election for the rule oracles: up to 6 projects, 6 voters.
pub fn tiny_instance(rng: &mut ChaCha8Rng) -> ElectionInstance {
    let n_projects = rng.random_range(1..=6);
    let n_voters = rng.random_range(1..=6);
    let budget: Money = rng.random_range(30..=300);
    let projects: Vec<Project> = (0..n_projects)
        .map(|i| Project {
            id: format!("p{i}"),
            cost: rng.random_range(1..=120),
            attributes: BTreeSet::new(),
            vote_count: 0,
            selected: false,
        })
        .collect();
    let mut ballots = Vec::new();
    for v in 0..n_voters {
        let mut approved = BTreeSet::new();
        for p in &projects {
            if rng.random::<f64>() < 0.5 {
                approved.insert(p.id.clone());
            }
        }
        if approved.is_empty() {
            approved.insert(projects[rng.random_range(0..n_projects)].id.clone());
        }
        ballots.push(Ballot {
            voter_id: format!("v{v}"),
            approved,
        });
    }
    let mut instance = ElectionInstance {
        district: "tiny".into(),
        year: 2021,
        budget,
        projects,
        ballots,
    };
    for p in &mut instance.projects {
        p.vote_count = instance
            .ballots
            .iter()
            .filter(|b| b.approved.contains(&p.id))
            .count() as u64;
    }
    instance
}

// ---------------------------------------------------------------------------
// Brute-force oracles
// ---------------------------------------------------------------------------

/// Power-set filter: every non-empty subset with total cost within budget,
/// sorted canonically.
pub fn bundle_oracle(projects: &[Project], budget: Money) -> Vec<Bundle> {
    let mut out = Vec::new();
    for mask in 1u32..(1u32 << projects.len()) {
        let members: Vec<&Project> = projects
            .iter()
            .enumerate()
            .filter(|(i, _)| mask & (1 << i) != 0)
            .map(|(_, p)| p)
            .collect();
        let cost: Money = members.iter().map(|p| p.cost).sum();
        if cost <= budget {
            out.push(Bundle::new(
                members.iter().map(|p| p.id.clone()).collect(),
                cost,
            ));
        }
    }
    out.sort();
    out
}

/// Greedy oracle: repeatedly scans for the best remaining project instead of
/// sorting once.
pub fn greedy_oracle(instance: &ElectionInstance) -> BTreeSet<String> {
    let mut winners = BTreeSet::new();
    let mut remaining = instance.budget;
    let mut available: Vec<&Project> = instance.projects.iter().collect();
    loop {
        let mut best: Option<&Project> = None;
        for p in &available {
            let better = match best {
                None => true,
                Some(b) => (p.vote_count, std::cmp::Reverse(p.cost), std::cmp::Reverse(&p.id))
                    > (b.vote_count, std::cmp::Reverse(b.cost), std::cmp::Reverse(&b.id)),
            };
            if better {
                best = Some(p);
            }
        }
        let Some(pick) = best else { break };
        available.retain(|p| p.id != pick.id);
        if pick.cost <= remaining {
            remaining -= pick.cost;
            winners.insert(pick.id.clone());
        }
    }
    winners
}

/// Exact fractions over i128 for the rule oracles; instances are small
/// enough that numerators never approach overflow.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Frac {
    pub num: i128,
    pub den: i128,
}

impl Frac {
    pub fn new(num: i128, den: i128) -> Self {
        assert!(den != 0);
        if num == 0 {
            return Frac { num: 0, den: 1 };
        }
        let sign = den.signum();
        let (num, den) = (num * sign, den * sign);
        let g = gcd(num.abs(), den);
        Frac {
            num: num / g,
            den: den / g,
        }
    }

    pub fn from_int(x: i128) -> Self {
        Frac { num: x, den: 1 }
    }

    pub fn zero() -> Self {
        Frac { num: 0, den: 1 }
    }

    pub fn add(self, other: Frac) -> Frac {
        Frac::new(self.num * other.den + other.num * self.den, self.den * other.den)
    }

    pub fn sub(self, other: Frac) -> Frac {
        Frac::new(self.num * other.den - other.num * self.den, self.den * other.den)
    }

    pub fn div_int(self, by: i128) -> Frac {
        Frac::new(self.num, self.den * by)
    }

    pub fn min(self, other: Frac) -> Frac {
        if self.lt(&other) {
            self
        } else {
            other
        }
    }

    pub fn lt(&self, other: &Frac) -> bool {
        self.num * other.den < other.num * self.den
    }

    pub fn le(&self, other: &Frac) -> bool {
        self.num * other.den <= other.num * self.den
    }
}

fn gcd(a: i128, b: i128) -> i128 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Phragmen oracle in the last-reset formulation: a voter's balance at time
/// `t` is `t - last_reset[voter]`, so a project's purchase time solves
/// `sum(t - last_reset[v]) = cost` over its approvers.
pub fn phragmen_oracle(
    instance: &ElectionInstance,
    budget: Money,
    excluded: &BTreeSet<String>,
) -> Vec<String> {
    let approvers: BTreeMap<&str, Vec<usize>> = instance
        .projects
        .iter()
        .map(|p| {
            let list: Vec<usize> = instance
                .ballots
                .iter()
                .enumerate()
                .filter(|(_, b)| b.approved.contains(&p.id))
                .map(|(v, _)| v)
                .collect();
            (p.id.as_str(), list)
        })
        .collect();
    let mut last_reset = vec![Frac::zero(); instance.ballots.len()];
    let mut remaining = budget as i128;
    let mut todo: Vec<&Project> = instance
        .projects
        .iter()
        .filter(|p| !excluded.contains(&p.id) && !approvers[p.id.as_str()].is_empty())
        .collect();
    todo.sort_by(|a, b| a.id.cmp(&b.id));
    let mut winners = Vec::new();
    while !todo.is_empty() {
        let mut best: Option<(Frac, usize)> = None;
        for (pos, p) in todo.iter().enumerate() {
            let supporters = &approvers[p.id.as_str()];
            // t = (cost + sum last_reset) / |supporters|
            let mut sum = Frac::from_int(p.cost as i128);
            for &v in supporters {
                sum = sum.add(last_reset[v]);
            }
            let t = sum.div_int(supporters.len() as i128);
            if best.is_none() || t.lt(&best.unwrap().0) {
                best = Some((t, pos));
            }
        }
        let (t, pos) = best.unwrap();
        let project = todo.remove(pos);
        if (project.cost as i128) > remaining {
            continue;
        }
        for &v in &approvers[project.id.as_str()] {
            last_reset[v] = t;
        }
        remaining -= project.cost as i128;
        winners.push(project.id.clone());
    }
    winners
}

/// Equal-shares oracle. The per-project payment level is found by brute
/// force over all subsets of supporters paying their full balance, instead
/// of the sorted prefix walk the implementation uses.
pub fn equal_shares_oracle(instance: &ElectionInstance) -> BTreeSet<String> {
    let n = instance.ballots.len() as i128;
    assert!(n > 0);
    let approvers: BTreeMap<&str, Vec<usize>> = instance
        .projects
        .iter()
        .map(|p| {
            let list: Vec<usize> = instance
                .ballots
                .iter()
                .enumerate()
                .filter(|(_, b)| b.approved.contains(&p.id))
                .map(|(v, _)| v)
                .collect();
            (p.id.as_str(), list)
        })
        .collect();
    let mut balances = vec![Frac::new(instance.budget as i128, n); instance.ballots.len()];
    let mut todo: Vec<&Project> = instance
        .projects
        .iter()
        .filter(|p| !approvers[p.id.as_str()].is_empty())
        .collect();
    todo.sort_by(|a, b| a.id.cmp(&b.id));
    let mut winners = BTreeSet::new();
    loop {
        let mut best: Option<(Frac, Frac, usize)> = None; // (rho, x, pos)
        for (pos, p) in todo.iter().enumerate() {
            let supporters = &approvers[p.id.as_str()];
            let Some(x) = oracle_payment_level(p.cost, supporters, &balances) else {
                continue;
            };
            let rho = if p.cost == 0 {
                Frac::zero()
            } else {
                Frac::new(x.num, x.den * p.cost as i128)
            };
            if best.is_none() || rho.lt(&best.unwrap().0) {
                best = Some((rho, x, pos));
            }
        }
        let Some((_, x, pos)) = best else { break };
        let project = todo.remove(pos);
        for &v in &approvers[project.id.as_str()] {
            let pay = balances[v].min(x);
            balances[v] = balances[v].sub(pay);
        }
        winners.insert(project.id.clone());
    }
    // completion over the rest with the unspent budget
    let spent: Money = winners
        .iter()
        .map(|id| instance.project(id).unwrap().cost)
        .sum();
    for id in phragmen_oracle(instance, instance.budget - spent, &winners) {
        winners.insert(id);
    }
    winners
}

/// All subsets S of supporters pay their full balance, the rest pay
/// `x = (cost - sum(S)) / (k - |S|)`; keep the smallest consistent level.
fn oracle_payment_level(cost: Money, supporters: &[usize], balances: &[Frac]) -> Option<Frac> {
    let k = supporters.len();
    let mut best: Option<Frac> = None;
    for mask in 0u32..(1u32 << k) {
        let full: Vec<usize> = (0..k).filter(|i| mask & (1 << i) != 0).collect();
        if full.len() == k {
            // everyone pays exactly their balance
            let total = supporters
                .iter()
                .fold(Frac::zero(), |acc, &v| acc.add(balances[v]));
            if total == Frac::from_int(cost as i128) {
                let max = supporters
                    .iter()
                    .map(|&v| balances[v])
                    .fold(Frac::zero(), |a, b| if a.lt(&b) { b } else { a });
                if best.is_none() || max.lt(&best.unwrap()) {
                    best = Some(max);
                }
            }
            continue;
        }
        let paid: Frac = full
            .iter()
            .fold(Frac::zero(), |acc, &i| acc.add(balances[supporters[i]]));
        let rest = (k - full.len()) as i128;
        let x = Frac::from_int(cost as i128).sub(paid).div_int(rest);
        // consistency: capped voters sit at or below x, the rest at or above
        let consistent = (0..k).all(|i| {
            let b = balances[supporters[i]];
            if full.contains(&i) {
                b.le(&x)
            } else {
                x.le(&b)
            }
        }) && Frac::zero().le(&x);
        if consistent && (best.is_none() || x.lt(&best.unwrap())) {
            best = Some(x);
        }
    }
    best
}

// ---------------------------------------------------------------------------
// Statistics helpers
// ---------------------------------------------------------------------------

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

fn sample_variance(values: &[f64]) -> f64 {
    let m = mean(values);
    values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (values.len() as f64 - 1.0)
}

/// One-sided Welch t-test p-value for H1: mean(a) > mean(b).
pub fn welch_one_sided_p(a: &[f64], b: &[f64]) -> f64 {
    use statrs::distribution::{ContinuousCDF, StudentsT};
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (va, vb) = (sample_variance(a), sample_variance(b));
    let se2 = va / na + vb / nb;
    if se2 == 0.0 {
        // no variance at all: decide by the point means
        return if mean(a) > mean(b) { 0.0 } else { 1.0 };
    }
    let t = (mean(a) - mean(b)) / se2.sqrt();
    let df = se2.powi(2) / ((va / na).powi(2) / (na - 1.0) + (vb / nb).powi(2) / (nb - 1.0));
    let dist = StudentsT::new(0.0, 1.0, df).expect("valid dof");
    1.0 - dist.cdf(t)
}

/// Uniform random ballot over the given ids (for metric fuzzing).
pub fn random_subset(ids: &[String], rng: &mut ChaCha8Rng) -> BTreeSet<String> {
    let k = rng.random_range(1..=ids.len());
    index::sample(rng, ids.len(), k)
        .into_iter()
        .map(|i| ids[i].clone())
        .collect()
}
