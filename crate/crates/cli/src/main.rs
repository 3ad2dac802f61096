//! Command-line driver for participatory budgeting consensus experiments.
//!
//! Subcommands: `parse` (validate a .pb file), `bundles` (enumerate/sample),
//! `rules` (baseline aggregation rules as JSON), `simulate` (single run),
//! `sweep` (parameter grid), `robustness` (repetitions to stability),
//! `report` (tables from recorded runs).
//!
//! Every flag can also be set through an environment variable with the
//! `PB_CONSENSUS_` prefix (e.g. `PB_CONSENSUS_SEED=7`). Exit codes:
//! 0 success, 1 usage error, 2 data error, 3 sweep finished with failed
//! cells.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand, ValueEnum};

use pb_consensus::bundles;
use pb_consensus::harness::{self, ExperimentConfig, OutputFormat, RunRecord};
use pb_consensus::learning::LearningConfig;
use pb_consensus::metrics::CompromiseBasis;
use pb_consensus::pabulib::{self, DistrictHistory};
use pb_consensus::rewards::CostTerm;
use pb_consensus::rules;

#[derive(Parser)]
#[command(
    name = "pb-consensus",
    version,
    about = "Consensus-based participatory budgeting simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate a pabulib file and print an instance summary.
    Parse(ParseArgs),
    /// Enumerate knapsack-feasible bundles, optionally sampling a k-bundle
    /// action space.
    Bundles(BundlesArgs),
    /// Run the baseline aggregation rules and print their outcomes as JSON.
    Rules(RulesArgs),
    /// Run a single seeded simulation and emit its record.
    Simulate(SimulateArgs),
    /// Run a full parameter sweep, streaming one record per cell.
    Sweep(SweepArgs),
    /// Estimate how many repetitions a cell needs for a stable modal
    /// consensus.
    Robustness(RobustnessArgs),
    /// Build report tables from recorded runs (JSON-lines input).
    Report(ReportArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Jsonl,
}

impl From<Format> for OutputFormat {
    fn from(format: Format) -> Self {
        match format {
            Format::Csv => OutputFormat::Csv,
            Format::Jsonl => OutputFormat::Jsonl,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum CostTermArg {
    Reward,
    Penalty,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum CompromiseBasisArg {
    InitialBundle,
    Ballot,
}

/// Where the election data comes from: one file or a district directory.
#[derive(Args)]
struct DataArgs {
    /// Single pabulib .pb file (treated as a one-year history).
    #[arg(long, env = "PB_CONSENSUS_PB", value_name = "FILE")]
    pb: Option<PathBuf>,
    /// Directory of pabulib .pb files spanning multiple years.
    #[arg(long, env = "PB_CONSENSUS_PB_DIR", value_name = "DIR")]
    pb_dir: Option<PathBuf>,
    /// District to select when the directory holds several.
    #[arg(long, env = "PB_CONSENSUS_DISTRICT")]
    district: Option<String>,
}

#[derive(Args)]
struct ParseArgs {
    /// Pabulib .pb file to validate.
    #[arg(long, env = "PB_CONSENSUS_PB", value_name = "FILE")]
    pb: PathBuf,
}

#[derive(Args)]
struct BundlesArgs {
    #[arg(long, env = "PB_CONSENSUS_PB", value_name = "FILE")]
    pb: PathBuf,
    /// Sample an action space of this many bundles.
    #[arg(long, env = "PB_CONSENSUS_BUNDLES")]
    bundles: Option<usize>,
    #[arg(long, env = "PB_CONSENSUS_SEED", default_value_t = 0)]
    seed: u64,
    /// Print the bundles themselves, not just counts.
    #[arg(long)]
    list: bool,
}

#[derive(Args)]
struct RulesArgs {
    #[arg(long, env = "PB_CONSENSUS_PB", value_name = "FILE")]
    pb: PathBuf,
}

#[derive(Args)]
struct LearningArgs {
    #[arg(long, env = "PB_CONSENSUS_ALPHA", default_value_t = 0.1)]
    alpha: f64,
    #[arg(long, env = "PB_CONSENSUS_DELTA", default_value_t = 0.1)]
    delta: f64,
    #[arg(long, env = "PB_CONSENSUS_EPSILON0", default_value_t = 1.0)]
    epsilon0: f64,
    #[arg(long, env = "PB_CONSENSUS_EPSILON_DECAY", default_value_t = 0.1)]
    epsilon_decay: f64,
    #[arg(long, env = "PB_CONSENSUS_EPSILON_MIN", default_value_t = 0.01)]
    epsilon_min: f64,
    #[arg(long, env = "PB_CONSENSUS_MAX_ITERS", default_value_t = 2000)]
    max_iters: usize,
    #[arg(long, env = "PB_CONSENSUS_STABILITY_WINDOW", default_value_t = 10)]
    stability_window: usize,
    /// Sign of the cost term in project rewards.
    #[arg(long, env = "PB_CONSENSUS_COST_TERM", value_enum, default_value_t = CostTermArg::Reward)]
    cost_term: CostTermArg,
    /// Preference the compromise metric is measured against.
    #[arg(long, env = "PB_CONSENSUS_COMPROMISE_BASIS", value_enum, default_value_t = CompromiseBasisArg::InitialBundle)]
    compromise_basis: CompromiseBasisArg,
}

impl LearningArgs {
    fn learning_config(&self) -> LearningConfig {
        LearningConfig {
            alpha: self.alpha,
            delta: self.delta,
            gamma: 0.0,
            epsilon0: self.epsilon0,
            epsilon_decay: self.epsilon_decay,
            epsilon_min: self.epsilon_min,
            max_iterations: self.max_iters,
            stability_window: self.stability_window,
            seed: 0,
        }
    }

    fn cost_term(&self) -> CostTerm {
        match self.cost_term {
            CostTermArg::Reward => CostTerm::Reward,
            CostTermArg::Penalty => CostTerm::Penalty,
        }
    }

    fn compromise_basis(&self) -> CompromiseBasis {
        match self.compromise_basis {
            CompromiseBasisArg::InitialBundle => CompromiseBasis::InitialBundle,
            CompromiseBasisArg::Ballot => CompromiseBasis::Ballot,
        }
    }
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, env = "PB_CONSENSUS_AGENTS", default_value_t = 50)]
    agents: usize,
    #[arg(long, env = "PB_CONSENSUS_IN_DEGREE", default_value_t = 4)]
    in_degree: usize,
    #[arg(long, env = "PB_CONSENSUS_BUNDLES", default_value_t = 10)]
    bundles: usize,
    #[command(flatten)]
    learning: LearningArgs,
    #[arg(long, env = "PB_CONSENSUS_SEED", default_value_t = 0)]
    seed: u64,
    /// Output file; stdout when omitted.
    #[arg(long, env = "PB_CONSENSUS_OUT")]
    out: Option<PathBuf>,
    #[arg(long, env = "PB_CONSENSUS_FORMAT", value_enum, default_value_t = Format::Jsonl)]
    format: Format,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Agent counts: comma list or range `lo..hi[:step]` (default step 10).
    #[arg(long, env = "PB_CONSENSUS_AGENTS", default_value = "50..100")]
    agents: String,
    /// In-degrees: comma list or range `lo..hi[:step]` (default step 2).
    #[arg(long, env = "PB_CONSENSUS_IN_DEGREE", default_value = "2..10")]
    in_degree: String,
    /// Bundle counts: comma list or range `lo..hi[:step]` (default step 1).
    #[arg(long, env = "PB_CONSENSUS_BUNDLES", default_value = "5..12")]
    bundles: String,
    #[command(flatten)]
    learning: LearningArgs,
    #[arg(long, env = "PB_CONSENSUS_REPS", default_value_t = 1)]
    reps: usize,
    #[arg(long, env = "PB_CONSENSUS_SEED", default_value_t = 0)]
    seed: u64,
    #[arg(long, env = "PB_CONSENSUS_WORKERS", default_value_t = 1)]
    workers: usize,
    /// Output file; stdout when omitted. Records stream as cells finish.
    #[arg(long, env = "PB_CONSENSUS_OUT")]
    out: Option<PathBuf>,
    #[arg(long, env = "PB_CONSENSUS_FORMAT", value_enum, default_value_t = Format::Jsonl)]
    format: Format,
}

#[derive(Args)]
struct RobustnessArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, env = "PB_CONSENSUS_AGENTS", default_value_t = 50)]
    agents: usize,
    #[arg(long, env = "PB_CONSENSUS_IN_DEGREE", default_value_t = 4)]
    in_degree: usize,
    #[arg(long, env = "PB_CONSENSUS_BUNDLES", default_value_t = 10)]
    bundles: usize,
    #[command(flatten)]
    learning: LearningArgs,
    #[arg(long, env = "PB_CONSENSUS_REPS", default_value_t = 30)]
    reps: usize,
    /// Extra runs the modal consensus must survive unchanged.
    #[arg(long, env = "PB_CONSENSUS_CONFIRM_WINDOW", default_value_t = 5)]
    confirm_window: usize,
    #[arg(long, env = "PB_CONSENSUS_SEED", default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct ReportArgs {
    /// JSON-lines records produced by `simulate` or `sweep`.
    #[arg(long, env = "PB_CONSENSUS_RECORDS", value_name = "FILE")]
    records: PathBuf,
    /// Directory the report tables are written to.
    #[arg(long, env = "PB_CONSENSUS_OUT", value_name = "DIR")]
    out: PathBuf,
    #[arg(long, env = "PB_CONSENSUS_FORMAT", value_enum, default_value_t = Format::Csv)]
    format: Format,
}

enum CliError {
    Usage(String),
    Data(String),
    PartialFailure(usize),
}

impl CliError {
    fn data(err: impl std::fmt::Display) -> Self {
        CliError::Data(err.to_string())
    }
}

/// Prints a payload line to stdout; a closed downstream pipe (e.g. `| head`)
/// ends output quietly instead of failing.
fn emit_line(text: &str) -> Result<(), CliError> {
    let stdout = std::io::stdout();
    let mut lock = stdout.lock();
    match writeln!(lock, "{text}") {
        Ok(()) => Ok(()),
        Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => Ok(()),
        Err(e) => Err(CliError::data(e)),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            let code = match err.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = err.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(message)) => {
            eprintln!("error: {message}");
            ExitCode::from(1)
        }
        Err(CliError::Data(message)) => {
            eprintln!("error: {message}");
            ExitCode::from(2)
        }
        Err(CliError::PartialFailure(failed)) => {
            eprintln!("warning: {failed} sweep cell(s) failed; see the error column");
            ExitCode::from(3)
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Parse(args) => cmd_parse(args),
        Command::Bundles(args) => cmd_bundles(args),
        Command::Rules(args) => cmd_rules(args),
        Command::Simulate(args) => cmd_simulate(args),
        Command::Sweep(args) => cmd_sweep(args),
        Command::Robustness(args) => cmd_robustness(args),
        Command::Report(args) => cmd_report(args),
    }
}

fn read_instance(path: &Path) -> Result<pabulib::ElectionInstance, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    pabulib::parse_election(&text)
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

impl DataArgs {
    fn load_history(&self) -> Result<DistrictHistory, CliError> {
        match (&self.pb, &self.pb_dir) {
            (Some(_), Some(_)) => Err(CliError::Usage(
                "pass either --pb or --pb-dir, not both".into(),
            )),
            (None, None) => Err(CliError::Usage("one of --pb or --pb-dir is required".into())),
            (Some(file), None) => {
                let text = fs::read_to_string(file)
                    .map_err(|e| CliError::Data(format!("{}: {e}", file.display())))?;
                pabulib::load_district_history(&[text]).map_err(CliError::data)
            }
            (None, Some(dir)) => {
                let mut paths: Vec<PathBuf> = fs::read_dir(dir)
                    .map_err(|e| CliError::Data(format!("{}: {e}", dir.display())))?
                    .filter_map(|entry| entry.ok().map(|e| e.path()))
                    .filter(|p| p.extension().is_some_and(|ext| ext == "pb"))
                    .collect();
                paths.sort();
                if paths.is_empty() {
                    return Err(CliError::Data(format!(
                        "{}: no .pb files found",
                        dir.display()
                    )));
                }
                let mut by_district: BTreeMap<String, Vec<String>> = BTreeMap::new();
                for path in &paths {
                    let instance = read_instance(path)?;
                    let text = fs::read_to_string(path)
                        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
                    by_district.entry(instance.district).or_default().push(text);
                }
                let documents = match &self.district {
                    Some(wanted) => by_district
                        .iter()
                        .find(|(name, _)| name.eq_ignore_ascii_case(wanted))
                        .map(|(_, docs)| docs)
                        .ok_or_else(|| {
                            CliError::Data(format!(
                                "district `{wanted}` not found; available: {}",
                                by_district.keys().cloned().collect::<Vec<_>>().join(", ")
                            ))
                        })?,
                    None if by_district.len() == 1 => by_district.values().next().unwrap(),
                    None => {
                        return Err(CliError::Usage(format!(
                            "--district is required; directory holds: {}",
                            by_district.keys().cloned().collect::<Vec<_>>().join(", ")
                        )))
                    }
                };
                pabulib::load_district_history(documents).map_err(CliError::data)
            }
        }
    }
}

fn cmd_parse(args: ParseArgs) -> Result<(), CliError> {
    let instance = read_instance(&args.pb)?;
    let summary = serde_json::json!({
        "district": instance.district,
        "year": instance.year,
        "budget": instance.budget,
        "projects": instance.projects.len(),
        "ballots": instance.ballots.len(),
        "total_votes": instance.projects.iter().map(|p| p.vote_count).sum::<u64>(),
        "selected_projects": instance.projects.iter().filter(|p| p.selected).count(),
    });
    emit_line(&serde_json::to_string_pretty(&summary).expect("summary serializes"))?;
    Ok(())
}

fn cmd_bundles(args: BundlesArgs) -> Result<(), CliError> {
    let instance = read_instance(&args.pb)?;
    let all = bundles::enumerate_valid_bundles(&instance.projects, instance.budget)
        .map_err(CliError::data)?;
    let space = match args.bundles {
        Some(k) => Some(bundles::sample_action_space(&all, k, args.seed).map_err(CliError::data)?),
        None => None,
    };
    let mut summary = serde_json::json!({
        "projects": instance.projects.len(),
        "budget": instance.budget,
        "valid_bundles": all.len(),
    });
    if let Some(space) = &space {
        summary["sampled_bundles"] = space.len().into();
        summary["seed"] = args.seed.into();
    }
    if args.list {
        let listed = space.as_ref().map(|s| &s.bundles).unwrap_or(&all);
        summary["bundles"] = serde_json::to_value(listed).expect("bundles serialize");
    }
    emit_line(&serde_json::to_string_pretty(&summary).expect("summary serializes"))?;
    Ok(())
}

fn cmd_rules(args: RulesArgs) -> Result<(), CliError> {
    let instance = read_instance(&args.pb)?;
    let outcomes = vec![
        rules::utilitarian_greedy(&instance),
        rules::sequential_phragmen(&instance, None),
        rules::method_of_equal_shares(&instance).map_err(CliError::data)?,
    ];
    emit_line(&serde_json::to_string_pretty(&outcomes).expect("outcomes serialize"))?;
    Ok(())
}

fn is_broken_pipe(err: &harness::HarnessError) -> bool {
    matches!(
        err,
        harness::HarnessError::Io { source, .. }
            if source.kind() == std::io::ErrorKind::BrokenPipe
    )
}

fn write_records(
    records: &[RunRecord],
    out: Option<&Path>,
    format: Format,
) -> Result<(), CliError> {
    let emit = |w: &mut dyn Write| -> Result<(), harness::HarnessError> {
        match format {
            Format::Jsonl => harness::write_jsonl(records, w),
            Format::Csv => harness::write_csv(records, w),
        }
    };
    match out {
        Some(path) => {
            let file = fs::File::create(path)
                .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
            let mut writer = BufWriter::new(file);
            emit(&mut writer).map_err(CliError::data)?;
            writer.flush().map_err(CliError::data)
        }
        None => {
            let stdout = std::io::stdout();
            let mut lock = stdout.lock();
            match emit(&mut lock) {
                Err(e) if is_broken_pipe(&e) => Ok(()),
                other => other.map_err(CliError::data),
            }
        }
    }
}

fn cmd_simulate(args: SimulateArgs) -> Result<(), CliError> {
    let history = args.data.load_history()?;
    let cfg = ExperimentConfig {
        agent_counts: vec![args.agents],
        in_degrees: vec![args.in_degree],
        bundle_counts: vec![args.bundles],
        learning: args.learning.learning_config(),
        cost_term: args.learning.cost_term(),
        compromise_basis: args.learning.compromise_basis(),
        repetitions: 1,
        master_seed: args.seed,
        workers: 1,
    };
    let records = harness::run_sweep(&cfg, &history).map_err(CliError::data)?;
    write_records(&records, args.out.as_deref(), args.format)?;
    if let Some(message) = records.first().and_then(|r| r.error.clone()) {
        return Err(CliError::Data(message));
    }
    Ok(())
}

/// Parses `a,b,c`, a single value, or `lo..hi[:step]` (both ends inclusive).
fn parse_values(spec: &str, default_step: usize) -> Result<Vec<usize>, CliError> {
    let spec = spec.trim();
    let bad = |why: &str| CliError::Usage(format!("cannot parse `{spec}`: {why}"));
    if let Some((range, step)) = spec
        .split_once(':')
        .map(|(r, s)| (r, Some(s)))
        .or(Some((spec, None)))
    {
        if let Some((lo, hi)) = range.split_once("..") {
            let lo: usize = lo.trim().parse().map_err(|_| bad("bad range start"))?;
            let hi: usize = hi.trim().parse().map_err(|_| bad("bad range end"))?;
            let step: usize = match step {
                Some(s) => s.trim().parse().map_err(|_| bad("bad step"))?,
                None => default_step,
            };
            if step == 0 {
                return Err(bad("step must be positive"));
            }
            if lo > hi {
                return Err(bad("range start exceeds end"));
            }
            let mut values: Vec<usize> = (lo..=hi).step_by(step).collect();
            if *values.last().unwrap() != hi {
                values.push(hi);
            }
            return Ok(values);
        }
    }
    spec.split(',')
        .map(|v| v.trim().parse().map_err(|_| bad("bad integer")))
        .collect()
}

fn cmd_sweep(args: SweepArgs) -> Result<(), CliError> {
    let history = args.data.load_history()?;
    let cfg = ExperimentConfig {
        agent_counts: parse_values(&args.agents, 10)?,
        in_degrees: parse_values(&args.in_degree, 2)?,
        bundle_counts: parse_values(&args.bundles, 1)?,
        learning: args.learning.learning_config(),
        cost_term: args.learning.cost_term(),
        compromise_basis: args.learning.compromise_basis(),
        repetitions: args.reps,
        master_seed: args.seed,
        workers: args.workers.max(1),
    };

    // Stream records as cells finish so an interrupted sweep keeps a valid
    // prefix on disk. CSV output streams rows after a header line.
    let mut sink: Box<dyn Write> = match &args.out {
        Some(path) => Box::new(BufWriter::new(fs::File::create(path).map_err(|e| {
            CliError::Data(format!("{}: {e}", path.display()))
        })?)),
        None => Box::new(std::io::stdout()),
    };
    let mut failures = 0usize;
    let mut first = true;
    let mut pipe_closed = false;
    let mut stream_error: Option<String> = None;
    let records = harness::run_sweep_streamed(&cfg, &history, |record| {
        if record.error.is_some() {
            failures += 1;
        }
        if stream_error.is_some() || pipe_closed {
            return;
        }
        let written = match args.format {
            Format::Jsonl => harness::write_jsonl(std::slice::from_ref(record), &mut sink),
            Format::Csv => {
                // write_csv emits a header per call; keep only the first one
                let mut buf = Vec::new();
                harness::write_csv(std::slice::from_ref(record), &mut buf).and_then(|()| {
                    let text = String::from_utf8(buf).expect("csv is utf-8");
                    let mut lines = text.lines();
                    let header = lines.next().unwrap_or_default();
                    let row = lines.next().unwrap_or_default();
                    let out = if first {
                        format!("{header}\n{row}\n")
                    } else {
                        format!("{row}\n")
                    };
                    sink.write_all(out.as_bytes())
                        .map_err(|e| harness::HarnessError::Io {
                            path: "<out>".into(),
                            source: e,
                        })
                })
            }
        };
        first = false;
        match written {
            Err(err) if is_broken_pipe(&err) => pipe_closed = true,
            Err(err) => stream_error = Some(err.to_string()),
            Ok(()) => {
                let _ = sink.flush();
            }
        }
    })
    .map_err(CliError::data)?;
    drop(sink);
    if let Some(message) = stream_error {
        return Err(CliError::Data(message));
    }
    eprintln!(
        "sweep finished: {} cells, {} failed",
        records.len(),
        failures
    );
    if failures > 0 {
        return Err(CliError::PartialFailure(failures));
    }
    Ok(())
}

fn cmd_robustness(args: RobustnessArgs) -> Result<(), CliError> {
    let history = args.data.load_history()?;
    let cfg = ExperimentConfig {
        agent_counts: vec![args.agents],
        in_degrees: vec![args.in_degree],
        bundle_counts: vec![args.bundles],
        learning: args.learning.learning_config(),
        cost_term: args.learning.cost_term(),
        compromise_basis: args.learning.compromise_basis(),
        repetitions: args.reps,
        master_seed: args.seed,
        workers: 1,
    };
    let result = harness::robustness_study(
        &cfg,
        &history,
        args.agents,
        args.in_degree,
        args.bundles,
        args.confirm_window,
    )
    .map_err(CliError::data)?;
    emit_line(&serde_json::to_string_pretty(&result).expect("result serializes"))?;
    Ok(())
}

fn cmd_report(args: ReportArgs) -> Result<(), CliError> {
    let file = fs::File::open(&args.records)
        .map_err(|e| CliError::Data(format!("{}: {e}", args.records.display())))?;
    let records =
        harness::read_jsonl(std::io::BufReader::new(file)).map_err(CliError::data)?;
    let paths =
        harness::emit_report(&records, &args.out, args.format.into()).map_err(CliError::data)?;
    emit_line(&serde_json::to_string_pretty(&paths).expect("paths serialize"))?;
    Ok(())
}
