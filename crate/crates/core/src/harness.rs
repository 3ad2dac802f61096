//! Experiment harness: seeded parameter sweeps over (agents, in-degree,
//! bundle count), robustness studies, rule comparisons, and tabular report
//! emission.
//!
//! Every sweep cell derives its seeds deterministically from the master seed
//! and the cell coordinates (see [`crate::seeds`]), so any single cell can be
//! reproduced in isolation and worker count or execution order never changes
//! a record. Cell failures are data: a failing cell yields a record with an
//! `error` field and the sweep carries on.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::mpsc;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bundles::{self, Bundle};
use crate::learning::{self, LearningConfig, SimulationConfig};
use crate::metrics::{self, CompromiseBasis};
use crate::pabulib::{DistrictHistory, ElectionInstance};
use crate::rewards::CostTerm;
use crate::rules::{self, RuleError};
use crate::seeds;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("sweep grid is empty")]
    EmptyGrid,
    #[error("repetitions must be at least 1")]
    NoRepetitions,
    #[error("confirm window must be at least 1")]
    NoConfirmWindow,
    #[error("no records supplied")]
    NoRecords,
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("record line {line}: {source}")]
    BadRecord {
        line: usize,
        source: serde_json::Error,
    },
    #[error(transparent)]
    Bundles(#[from] bundles::BundleError),
    #[error(transparent)]
    Learn(#[from] learning::LearnError),
    #[error(transparent)]
    Rules(#[from] RuleError),
}

fn io_err(path: &Path, source: std::io::Error) -> HarnessError {
    HarnessError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Output format for record streams.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputFormat {
    Csv,
    Jsonl,
}

/// Grid definition for one sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub agent_counts: Vec<usize>,
    pub in_degrees: Vec<usize>,
    pub bundle_counts: Vec<usize>,
    /// Base learning parameters; the `seed` field is ignored and replaced by
    /// the per-cell derived seed.
    pub learning: LearningConfig,
    pub cost_term: CostTerm,
    pub compromise_basis: CompromiseBasis,
    pub repetitions: usize,
    pub master_seed: u64,
    pub workers: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            agent_counts: vec![50],
            in_degrees: vec![4],
            bundle_counts: vec![10],
            learning: LearningConfig::default(),
            cost_term: CostTerm::Reward,
            compromise_basis: CompromiseBasis::InitialBundle,
            repetitions: 1,
            master_seed: 0,
            workers: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Cell {
    agents: usize,
    in_degree: usize,
    bundles: usize,
    repetition: usize,
}

impl ExperimentConfig {
    fn cells(&self) -> Vec<Cell> {
        let mut cells = Vec::new();
        for &agents in &self.agent_counts {
            for &in_degree in &self.in_degrees {
                for &bundles in &self.bundle_counts {
                    for repetition in 0..self.repetitions {
                        cells.push(Cell {
                            agents,
                            in_degree,
                            bundles,
                            repetition,
                        });
                    }
                }
            }
        }
        cells
    }

    fn validate(&self) -> Result<(), HarnessError> {
        if self.agent_counts.is_empty()
            || self.in_degrees.is_empty()
            || self.bundle_counts.is_empty()
        {
            return Err(HarnessError::EmptyGrid);
        }
        if self.repetitions == 0 {
            return Err(HarnessError::NoRepetitions);
        }
        Ok(())
    }
}

/// One executed sweep cell, flat for CSV/JSON-lines emission. Metric fields
/// are present only for converged runs; `error` marks failed cells.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub district: String,
    pub year: i32,
    pub agents: usize,
    pub in_degree: usize,
    pub bundles: usize,
    pub repetition: usize,
    /// Derived simulation seed of this cell.
    pub seed: u64,
    pub converged: Option<bool>,
    pub iterations: Option<usize>,
    /// Winner project ids joined with `|`.
    pub consensus: Option<String>,
    pub consensus_size: Option<usize>,
    pub consensus_cost: Option<u64>,
    pub compromise_cost: Option<f64>,
    pub unfairness: Option<f64>,
    pub popularity: Option<f64>,
    pub budget_utilization: Option<f64>,
    pub overlap_greedy: Option<f64>,
    pub overlap_phragmen: Option<f64>,
    pub overlap_equal_shares: Option<f64>,
    /// Wall-clock cost of the cell. Not serialized: emitted streams must be
    /// byte-identical across repeated seeded invocations.
    #[serde(skip)]
    pub duration_ms: u64,
    pub error: Option<String>,
}

/// Stable column order of the CSV emission, documented in the manifest.
pub const RECORD_COLUMNS: &[&str] = &[
    "district",
    "year",
    "agents",
    "in_degree",
    "bundles",
    "repetition",
    "seed",
    "converged",
    "iterations",
    "consensus",
    "consensus_size",
    "consensus_cost",
    "compromise_cost",
    "unfairness",
    "popularity",
    "budget_utilization",
    "overlap_greedy",
    "overlap_phragmen",
    "overlap_equal_shares",
    "error",
];

/// Winner sets of the three baseline rules, computed once per instance.
fn rule_winner_sets(instance: &ElectionInstance) -> BTreeMap<String, BTreeSet<String>> {
    let mut winners = BTreeMap::new();
    let greedy = rules::utilitarian_greedy(instance);
    winners.insert(greedy.rule.name().to_string(), greedy.winners);
    let phragmen = rules::sequential_phragmen(instance, None);
    winners.insert(phragmen.rule.name().to_string(), phragmen.winners);
    if let Ok(es) = rules::method_of_equal_shares(instance) {
        winners.insert(es.rule.name().to_string(), es.winners);
    }
    winners
}

fn run_cell(
    cell: Cell,
    cfg: &ExperimentConfig,
    history: &DistrictHistory,
    instance: &ElectionInstance,
    all_bundles: &[Bundle],
    rule_winners: &BTreeMap<String, BTreeSet<String>>,
) -> RunRecord {
    let started = Instant::now();
    let district = &history.district;
    // The action space is shared by every repetition of a cell's parameter
    // combination; only the simulation seed varies per repetition.
    let space_seed = seeds::derive_seed(
        cfg.master_seed,
        &format!("space|{district}"),
        &[cell.bundles as u64],
    );
    let sim_seed = seeds::derive_seed(
        cfg.master_seed,
        &format!("sim|{district}"),
        &[
            cell.agents as u64,
            cell.in_degree as u64,
            cell.bundles as u64,
            cell.repetition as u64,
        ],
    );
    let mut record = RunRecord {
        district: district.clone(),
        year: instance.year,
        agents: cell.agents,
        in_degree: cell.in_degree,
        bundles: cell.bundles,
        repetition: cell.repetition,
        seed: sim_seed,
        converged: None,
        iterations: None,
        consensus: None,
        consensus_size: None,
        consensus_cost: None,
        compromise_cost: None,
        unfairness: None,
        popularity: None,
        budget_utilization: None,
        overlap_greedy: None,
        overlap_phragmen: None,
        overlap_equal_shares: None,
        duration_ms: 0,
        error: None,
    };

    let outcome = (|| -> Result<(), String> {
        let space = bundles::sample_action_space(all_bundles, cell.bundles, space_seed)
            .map_err(|e| e.to_string())?;
        let mut sim_cfg =
            SimulationConfig::new(cell.agents, cell.in_degree, cfg.learning.clone());
        sim_cfg.learning.seed = sim_seed;
        sim_cfg.cost_term = cfg.cost_term;
        let sim =
            learning::run_simulation(instance, history, &space, &sim_cfg).map_err(|e| e.to_string())?;
        record.converged = Some(sim.converged);
        record.iterations = Some(sim.iterations);
        if let Some(consensus) = &sim.consensus {
            let ids: Vec<&str> = consensus.project_ids.iter().map(|s| s.as_str()).collect();
            record.consensus = Some(ids.join("|"));
            record.consensus_size = Some(consensus.size());
            record.consensus_cost = Some(consensus.total_cost);
            let overlaps: BTreeMap<String, f64> = rule_winners
                .iter()
                .map(|(name, winners)| {
                    (name.clone(), rules::overlap(&consensus.project_ids, winners))
                })
                .collect();
            let report = metrics::build_report(
                &sim.agents,
                &space,
                consensus,
                instance,
                overlaps,
                cfg.compromise_basis,
            );
            record.compromise_cost = Some(report.compromise_cost);
            record.unfairness = Some(report.unfairness);
            record.popularity = Some(report.popularity);
            record.budget_utilization = Some(report.budget_utilization);
            record.overlap_greedy = report.rule_overlaps.get("utilitarian_greedy").copied();
            record.overlap_phragmen = report
                .rule_overlaps
                .get("sequential_phragmen_money_earning")
                .copied();
            record.overlap_equal_shares = report
                .rule_overlaps
                .get("equal_shares_phragmen_completion")
                .copied();
        }
        Ok(())
    })();
    if let Err(message) = outcome {
        record.error = Some(message);
    }
    record.duration_ms = started.elapsed().as_millis() as u64;
    record
}

/// Runs the full Cartesian sweep, returning records in cell order.
pub fn run_sweep(
    cfg: &ExperimentConfig,
    history: &DistrictHistory,
) -> Result<Vec<RunRecord>, HarnessError> {
    run_sweep_streamed(cfg, history, |_| {})
}

/// As [`run_sweep`], invoking `on_record` as each record becomes final, in
/// cell order, so interrupted sweeps leave a valid prefix on disk. With
/// `workers > 1` cells execute concurrently; emission order and record
/// content are unchanged because each cell derives its own seeds.
pub fn run_sweep_streamed(
    cfg: &ExperimentConfig,
    history: &DistrictHistory,
    mut on_record: impl FnMut(&RunRecord),
) -> Result<Vec<RunRecord>, HarnessError> {
    cfg.validate()?;
    let instance = history.latest();
    let all_bundles = bundles::enumerate_valid_bundles(&instance.projects, instance.budget)?;
    let rule_winners = rule_winner_sets(instance);
    let cells = cfg.cells();

    let mut records = Vec::with_capacity(cells.len());
    if cfg.workers <= 1 {
        for &cell in &cells {
            let record = run_cell(cell, cfg, history, instance, &all_bundles, &rule_winners);
            on_record(&record);
            records.push(record);
        }
        return Ok(records);
    }

    let next = AtomicUsize::new(0);
    let (tx, rx) = mpsc::channel::<(usize, RunRecord)>();
    std::thread::scope(|scope| {
        for _ in 0..cfg.workers {
            let tx = tx.clone();
            let next = &next;
            let cells = &cells;
            let all_bundles = &all_bundles;
            let rule_winners = &rule_winners;
            scope.spawn(move || loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(&cell) = cells.get(i) else { break };
                let record = run_cell(cell, cfg, history, instance, all_bundles, rule_winners);
                if tx.send((i, record)).is_err() {
                    break;
                }
            });
        }
        drop(tx);
        // deliver in cell order regardless of completion order
        let mut pending: BTreeMap<usize, RunRecord> = BTreeMap::new();
        let mut expected = 0usize;
        for (i, record) in rx {
            pending.insert(i, record);
            while let Some(record) = pending.remove(&expected) {
                on_record(&record);
                records.push(record);
                expected += 1;
            }
        }
    });
    Ok(records)
}

/// Winners, size, and Jaccard overlap of each baseline rule against a
/// consensus winner set.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RuleComparison {
    pub winners: BTreeSet<String>,
    pub winner_count: usize,
    pub consensus_size: usize,
    pub overlap: f64,
}

/// Runs all three rules against the instance and scores their overlap with
/// the consensus winner set.
pub fn compare_with_rules(
    instance: &ElectionInstance,
    consensus: &BTreeSet<String>,
) -> Result<BTreeMap<String, RuleComparison>, HarnessError> {
    let mut out = BTreeMap::new();
    let outcomes = vec![
        rules::utilitarian_greedy(instance),
        rules::sequential_phragmen(instance, None),
        rules::method_of_equal_shares(instance)?,
    ];
    for outcome in outcomes {
        out.insert(
            outcome.rule.name().to_string(),
            RuleComparison {
                winner_count: outcome.winners.len(),
                consensus_size: consensus.len(),
                overlap: rules::overlap(consensus, &outcome.winners),
                winners: outcome.winners,
            },
        );
    }
    Ok(out)
}

/// Result of a repetition-stability study on one parameter cell.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RobustnessResult {
    /// Smallest prefix length whose modal consensus survives the confirm
    /// window; equals `runs` when unstable.
    pub repetitions_to_stability: usize,
    pub stable: bool,
    pub confirm_window: usize,
    pub runs: usize,
    /// Modal consensus of the stable prefix (ids joined with `|`).
    pub modal_consensus: Option<String>,
}

/// Modal consensus over run outcomes; non-convergence is its own category.
/// Ties prefer a concrete bundle over non-convergence, then the canonically
/// smaller winner set.
fn modal_outcome(outcomes: &[Option<BTreeSet<String>>]) -> Option<BTreeSet<String>> {
    let mut counts: BTreeMap<Option<&BTreeSet<String>>, usize> = BTreeMap::new();
    for outcome in outcomes {
        *counts.entry(outcome.as_ref()).or_insert(0) += 1;
    }
    counts
        .into_iter()
        .max_by(|(key_a, count_a), (key_b, count_b)| {
            count_a.cmp(count_b).then_with(|| {
                // prefer Some over None, then smaller sets; reversed because
                // max_by keeps the greater element
                match (key_a, key_b) {
                    (Some(a), Some(b)) => b.cmp(a),
                    (Some(_), None) => std::cmp::Ordering::Greater,
                    (None, Some(_)) => std::cmp::Ordering::Less,
                    (None, None) => std::cmp::Ordering::Equal,
                }
            })
        })
        .and_then(|(key, _)| key.cloned())
}

/// Repeats one cell with distinct derived seeds and reports how many runs
/// the modal consensus needs before it stops changing: the smallest `R`
/// such that the mode over runs `1..=R` equals the mode over every prefix
/// up to `R + confirm_window`. Capped at `cfg.repetitions` with
/// `stable = false` when no prefix settles.
pub fn robustness_study(
    cfg: &ExperimentConfig,
    history: &DistrictHistory,
    agents: usize,
    in_degree: usize,
    bundle_count: usize,
    confirm_window: usize,
) -> Result<RobustnessResult, HarnessError> {
    if cfg.repetitions == 0 {
        return Err(HarnessError::NoRepetitions);
    }
    if confirm_window == 0 {
        return Err(HarnessError::NoConfirmWindow);
    }
    let mut cell_cfg = cfg.clone();
    cell_cfg.agent_counts = vec![agents];
    cell_cfg.in_degrees = vec![in_degree];
    cell_cfg.bundle_counts = vec![bundle_count];
    let records = run_sweep(&cell_cfg, history)?;
    let outcomes: Vec<Option<BTreeSet<String>>> = records
        .iter()
        .map(|r| {
            r.consensus
                .as_ref()
                .map(|ids| ids.split('|').map(str::to_string).collect())
        })
        .collect();

    let runs = outcomes.len();
    for stable_at in 1..=runs.saturating_sub(confirm_window) {
        let mode = modal_outcome(&outcomes[..stable_at]);
        let confirmed = (1..=confirm_window)
            .all(|extra| modal_outcome(&outcomes[..stable_at + extra]) == mode);
        if confirmed {
            return Ok(RobustnessResult {
                repetitions_to_stability: stable_at,
                stable: true,
                confirm_window,
                runs,
                modal_consensus: mode.map(|ids| {
                    ids.iter().map(|s| s.as_str()).collect::<Vec<_>>().join("|")
                }),
            });
        }
    }
    Ok(RobustnessResult {
        repetitions_to_stability: runs,
        stable: false,
        confirm_window,
        runs,
        modal_consensus: modal_outcome(&outcomes)
            .map(|ids| ids.iter().map(|s| s.as_str()).collect::<Vec<_>>().join("|")),
    })
}

// ---------------------------------------------------------------------------
// Emission: JSON-lines, CSV, aggregation tables, reference context
// ---------------------------------------------------------------------------

pub fn write_jsonl<W: Write>(records: &[RunRecord], mut writer: W) -> Result<(), HarnessError> {
    for record in records {
        let line = serde_json::to_string(record).expect("record serializes");
        writeln!(writer, "{line}").map_err(|e| HarnessError::Io {
            path: "<writer>".into(),
            source: e,
        })?;
    }
    Ok(())
}

pub fn read_jsonl<R: BufRead>(reader: R) -> Result<Vec<RunRecord>, HarnessError> {
    let mut records = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| HarnessError::Io {
            path: "<reader>".into(),
            source: e,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        records.push(
            serde_json::from_str(&line).map_err(|source| HarnessError::BadRecord {
                line: idx + 1,
                source,
            })?,
        );
    }
    Ok(records)
}

pub fn write_csv<W: Write>(records: &[RunRecord], writer: W) -> Result<(), HarnessError> {
    let mut csv_writer = csv::Writer::from_writer(writer);
    for record in records {
        csv_writer.serialize(record)?;
    }
    csv_writer.flush().map_err(|e| HarnessError::Io {
        path: "<writer>".into(),
        source: e,
    })?;
    Ok(())
}

/// Which sweep coordinates an aggregation groups by.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GroupKey {
    Agents,
    InDegree,
    Bundles,
}

/// One group of an aggregation table. Iteration statistics cover every
/// error-free run (non-converged runs count at their max-iteration cost);
/// metric means cover converged runs only.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AggregateRow {
    pub agents: Option<usize>,
    pub in_degree: Option<usize>,
    pub bundles: Option<usize>,
    pub runs: usize,
    pub converged_runs: usize,
    pub convergence_rate: f64,
    pub mean_iterations: f64,
    pub std_iterations: f64,
    pub mean_compromise: Option<f64>,
    pub mean_unfairness: Option<f64>,
    pub mean_popularity: Option<f64>,
    pub mean_budget_utilization: Option<f64>,
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

fn population_std(values: &[f64]) -> f64 {
    let m = mean(values);
    (values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / values.len() as f64).sqrt()
}

type GroupTuple = (Option<usize>, Option<usize>, Option<usize>);

/// Groups records by the chosen keys and reduces each group to means and
/// spreads, sorted by key tuple.
pub fn aggregate(records: &[RunRecord], keys: &[GroupKey]) -> Vec<AggregateRow> {
    let key_of = |r: &RunRecord| -> GroupTuple {
        let pick = |key: GroupKey, value: usize| keys.contains(&key).then_some(value);
        (
            pick(GroupKey::Agents, r.agents),
            pick(GroupKey::InDegree, r.in_degree),
            pick(GroupKey::Bundles, r.bundles),
        )
    };
    let mut groups: BTreeMap<GroupTuple, Vec<&RunRecord>> = BTreeMap::new();
    for record in records.iter().filter(|r| r.error.is_none()) {
        groups.entry(key_of(record)).or_default().push(record);
    }
    groups
        .into_iter()
        .map(|((agents, in_degree, bundles), group)| {
            let iterations: Vec<f64> = group
                .iter()
                .filter_map(|r| r.iterations)
                .map(|i| i as f64)
                .collect();
            let converged: Vec<&&RunRecord> =
                group.iter().filter(|r| r.converged == Some(true)).collect();
            let metric_mean = |select: fn(&RunRecord) -> Option<f64>| -> Option<f64> {
                let values: Vec<f64> = converged.iter().filter_map(|r| select(r)).collect();
                (!values.is_empty()).then(|| mean(&values))
            };
            AggregateRow {
                agents,
                in_degree,
                bundles,
                runs: group.len(),
                converged_runs: converged.len(),
                convergence_rate: converged.len() as f64 / group.len().max(1) as f64,
                mean_iterations: if iterations.is_empty() {
                    f64::NAN
                } else {
                    mean(&iterations)
                },
                std_iterations: if iterations.is_empty() {
                    f64::NAN
                } else {
                    population_std(&iterations)
                },
                mean_compromise: metric_mean(|r| r.compromise_cost),
                mean_unfairness: metric_mean(|r| r.unfairness),
                mean_popularity: metric_mean(|r| r.popularity),
                mean_budget_utilization: metric_mean(|r| r.budget_utilization),
            }
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Reference context: published values for the three Polish districts.
// Informational only; reports show them next to measured values with the
// relative difference annotated, never as pass/fail assertions, because they
// depend on the source study's dataset snapshot, seeds, and conventions.
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize)]
pub struct DistrictReference {
    pub district: &'static str,
    pub consensus_size: u32,
    pub equal_shares_size: u32,
    pub phragmen_size: u32,
    pub greedy_size: u32,
    pub overlap_equal_shares: f64,
    pub overlap_phragmen: f64,
    pub overlap_greedy: f64,
}

pub const DISTRICT_REFERENCES: &[DistrictReference] = &[
    DistrictReference {
        district: "Rembertow",
        consensus_size: 8,
        equal_shares_size: 9,
        phragmen_size: 9,
        greedy_size: 6,
        overlap_equal_shares: 0.62,
        overlap_phragmen: 0.61,
        overlap_greedy: 0.49,
    },
    DistrictReference {
        district: "Ursynow",
        consensus_size: 8,
        equal_shares_size: 8,
        phragmen_size: 8,
        greedy_size: 6,
        overlap_equal_shares: 0.72,
        overlap_phragmen: 0.75,
        overlap_greedy: 0.73,
    },
    DistrictReference {
        district: "Ruda",
        consensus_size: 7,
        equal_shares_size: 8,
        phragmen_size: 8,
        greedy_size: 5,
        overlap_equal_shares: 0.62,
        overlap_phragmen: 0.66,
        overlap_greedy: 0.72,
    },
];

/// Cross-district mean compromise and unfairness per method.
#[derive(Debug, Clone, Serialize)]
pub struct MethodReference {
    pub method: &'static str,
    pub mean_compromise: f64,
    pub mean_unfairness: f64,
}

pub const METHOD_REFERENCES: &[MethodReference] = &[
    MethodReference {
        method: "consensus",
        mean_compromise: 0.68,
        mean_unfairness: 0.17,
    },
    MethodReference {
        method: "equal_shares",
        mean_compromise: 0.66,
        mean_unfairness: 0.16,
    },
    MethodReference {
        method: "phragmen",
        mean_compromise: 0.62,
        mean_unfairness: 0.15,
    },
    MethodReference {
        method: "greedy",
        mean_compromise: 0.56,
        mean_unfairness: 0.19,
    },
];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonRow {
    pub metric: String,
    pub measured: f64,
    pub reference: f64,
    /// `(measured - reference) / reference`.
    pub relative_difference: f64,
}

/// Measured-vs-reference table for one district.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReferenceComparison {
    pub district: String,
    /// Bundle count whose records feed the measured means (the largest
    /// swept, mirroring how the reference overlaps were produced).
    pub bundle_count_basis: usize,
    pub converged_runs: usize,
    pub rows: Vec<ComparisonRow>,
}

fn comparison_row(metric: &str, measured: Option<f64>, reference: f64) -> Option<ComparisonRow> {
    measured.map(|m| ComparisonRow {
        metric: metric.to_string(),
        measured: m,
        reference,
        relative_difference: (m - reference) / reference,
    })
}

/// Builds measured-vs-reference comparisons for every record district with
/// published reference values. Informational: nothing here asserts.
pub fn build_reference_comparisons(records: &[RunRecord]) -> Vec<ReferenceComparison> {
    let mut out = Vec::new();
    for reference in DISTRICT_REFERENCES {
        let district_records: Vec<&RunRecord> = records
            .iter()
            .filter(|r| r.district.eq_ignore_ascii_case(reference.district))
            .collect();
        if district_records.is_empty() {
            continue;
        }
        let basis = district_records.iter().map(|r| r.bundles).max().unwrap_or(0);
        let converged: Vec<&&RunRecord> = district_records
            .iter()
            .filter(|r| r.bundles == basis && r.converged == Some(true))
            .collect();
        let metric_mean = |select: fn(&RunRecord) -> Option<f64>| -> Option<f64> {
            let values: Vec<f64> = converged.iter().filter_map(|r| select(r)).collect();
            (!values.is_empty()).then(|| mean(&values))
        };
        let consensus_reference = METHOD_REFERENCES
            .iter()
            .find(|m| m.method == "consensus")
            .expect("consensus row is defined");
        let rows: Vec<ComparisonRow> = [
            comparison_row(
                "overlap_equal_shares",
                metric_mean(|r| r.overlap_equal_shares),
                reference.overlap_equal_shares,
            ),
            comparison_row(
                "overlap_phragmen",
                metric_mean(|r| r.overlap_phragmen),
                reference.overlap_phragmen,
            ),
            comparison_row(
                "overlap_greedy",
                metric_mean(|r| r.overlap_greedy),
                reference.overlap_greedy,
            ),
            comparison_row(
                "compromise_cost",
                metric_mean(|r| r.compromise_cost),
                consensus_reference.mean_compromise,
            ),
            comparison_row(
                "unfairness",
                metric_mean(|r| r.unfairness),
                consensus_reference.mean_unfairness,
            ),
        ]
        .into_iter()
        .flatten()
        .collect();
        if !rows.is_empty() {
            out.push(ReferenceComparison {
                district: reference.district.to_string(),
                bundle_count_basis: basis,
                converged_runs: converged.len(),
                rows,
            });
        }
    }
    out
}

/// Everything `emit_report` writes.
#[derive(Debug, Clone, Serialize)]
pub struct ReportPaths {
    pub records: PathBuf,
    pub manifest: PathBuf,
    pub aggregates: Vec<PathBuf>,
    pub reference_values: PathBuf,
    pub reference_comparison: Option<PathBuf>,
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), HarnessError> {
    std::fs::write(path, bytes).map_err(|e| io_err(path, e))
}

/// Writes the record stream, a column manifest, per-figure aggregation
/// tables (iterations and metrics vs in-degree / bundle count / agents), the
/// reference context, and, when reference districts are present, the
/// measured-vs-reference comparison.
pub fn emit_report(
    records: &[RunRecord],
    dir: &Path,
    format: OutputFormat,
) -> Result<ReportPaths, HarnessError> {
    if records.is_empty() {
        return Err(HarnessError::NoRecords);
    }
    std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;

    let records_path = match format {
        OutputFormat::Csv => {
            let path = dir.join("records.csv");
            let mut buf = Vec::new();
            write_csv(records, &mut buf)?;
            write_file(&path, &buf)?;
            path
        }
        OutputFormat::Jsonl => {
            let path = dir.join("records.jsonl");
            let mut buf = Vec::new();
            write_jsonl(records, &mut buf)?;
            write_file(&path, &buf)?;
            path
        }
    };

    let mut aggregates = Vec::new();
    let tables: [(&str, &[GroupKey]); 4] = [
        ("agg_by_in_degree.csv", &[GroupKey::InDegree]),
        ("agg_by_bundles.csv", &[GroupKey::Bundles]),
        ("agg_by_agents.csv", &[GroupKey::Agents]),
        (
            "agg_by_in_degree_bundles.csv",
            &[GroupKey::InDegree, GroupKey::Bundles],
        ),
    ];
    for (name, keys) in tables {
        let path = dir.join(name);
        let mut csv_writer = csv::Writer::from_writer(Vec::new());
        for row in aggregate(records, keys) {
            csv_writer.serialize(row)?;
        }
        let buf = csv_writer.into_inner().expect("vec writer never fails");
        write_file(&path, &buf)?;
        aggregates.push(path);
    }

    let reference_values = dir.join("reference_values.json");
    let reference_blob = serde_json::json!({
        "note": "published reference values for the three Polish districts; \
                 informational context only, never asserted",
        "districts": DISTRICT_REFERENCES,
        "method_means": METHOD_REFERENCES,
    });
    write_file(
        &reference_values,
        serde_json::to_string_pretty(&reference_blob)
            .expect("reference values serialize")
            .as_bytes(),
    )?;

    let comparisons = build_reference_comparisons(records);
    let reference_comparison = if comparisons.is_empty() {
        None
    } else {
        let path = dir.join("reference_comparison.json");
        write_file(
            &path,
            serde_json::to_string_pretty(&comparisons)
                .expect("comparisons serialize")
                .as_bytes(),
        )?;
        Some(path)
    };

    let manifest_path = dir.join("manifest.json");
    let manifest = serde_json::json!({
        "record_columns": RECORD_COLUMNS,
        "conventions": {
            "phragmen_variant": "sequential_phragmen_money_earning",
            "equal_shares_variant": "equal_shares_phragmen_completion",
            "popularity_normalization": metrics::POPULARITY_NORMALIZATION,
            "iterations_on_nonconvergence": "max_iterations",
            "seed_derivation": "sha256(master_le || 0x00 || label || (0x1f part_le)*)[..8] as le u64",
        },
        "files": {
            "records": records_path.file_name().and_then(|n| n.to_str()),
            "aggregates": tables.iter().map(|(n, _)| *n).collect::<Vec<_>>(),
            "reference_values": "reference_values.json",
        },
    });
    write_file(
        &manifest_path,
        serde_json::to_string_pretty(&manifest)
            .expect("manifest serializes")
            .as_bytes(),
    )?;

    Ok(ReportPaths {
        records: records_path,
        manifest: manifest_path,
        aggregates,
        reference_values,
        reference_comparison,
    })
}
