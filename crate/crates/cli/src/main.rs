//! `apid`: simulate, tune and inspect joint controllers of a planar mobile
//! manipulator.
//!
//! Exit codes: 0 success, 1 I/O or internal failure, 2 configuration error,
//! 3 simulation diverged, 4 Ziegler–Nichols tuning failed.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use apid::control::ZnConfig;
use apid::dynamics::compliance_sweep;
use apid::formats::{
    controllers_to_json, grid_points, parse_controllers_json, parse_grid_spec, parse_run_config_json,
    parse_scenario_json, to_json_pretty, write_bo_trace_csv, write_compliance_csv, write_rollout_csv, zn_report,
    ConfigError, CostSummary, RunConfig,
};
use apid::harness::{
    per_joint_costs, rollout, staged_tune, zn_tune_all, ControllerAssignment, CostWeights, HarnessError, RolloutTrace,
    Scenario, TuneSettings,
};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

#[derive(Parser)]
#[command(name = "apid", version, about = "Nonlinear adaptive PID tuning for manipulator joints")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one closed-loop rollout and write its trace and per-joint costs.
    Sim(SimArgs),
    /// Ziegler–Nichols baseline, then staged Bayesian optimization per joint.
    Tune(TuneArgs),
    /// Ziegler–Nichols gains for every joint.
    Zn(ZnArgs),
    /// Tip compliance ellipsoids over a grid of configurations.
    Compliance(ComplianceArgs),
}

#[derive(Args)]
struct ScenarioArg {
    /// Scenario JSON; the built-in mobile-manipulator scenario if omitted.
    #[arg(long)]
    scenario: Option<PathBuf>,
}

#[derive(Args)]
struct SimArgs {
    #[command(flatten)]
    scenario: ScenarioArg,
    /// Controllers JSON, one entry per joint.
    #[arg(long)]
    controllers: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Score only this many evenly spaced samples.
    #[arg(long)]
    decimate_to_n: Option<usize>,
}

#[derive(Args)]
struct TuneArgs {
    /// Run configuration JSON; flags given here override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    scenario: ScenarioArg,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long = "budget")]
    budget_per_joint: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    decimate_to_n: Option<usize>,
}

#[derive(Args)]
struct ZnArgs {
    #[command(flatten)]
    scenario: ScenarioArg,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ComplianceArgs {
    #[command(flatten)]
    scenario: ScenarioArg,
    /// `start:stop:count` per joint, comma separated.
    #[arg(long)]
    grid: String,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug)]
enum CliError {
    Config(ConfigError),
    Diverged(f64),
    ZieglerNichols(String),
    Other(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            Self::Other(_) => 1,
            Self::Config(_) => 2,
            Self::Diverged(_) => 3,
            Self::ZieglerNichols(_) => 4,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Config(e) => write!(f, "configuration error: {e}"),
            Self::Diverged(t) => write!(f, "simulation diverged at t = {t} s"),
            Self::ZieglerNichols(m) | Self::Other(m) => f.write_str(m),
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        Self::Config(e)
    }
}

impl From<HarnessError> for CliError {
    fn from(e: HarnessError) -> Self {
        match e {
            HarnessError::SimulationDiverged { t } => Self::Diverged(t),
            HarnessError::ZieglerNichols { .. } | HarnessError::NonPositiveGains { .. } => {
                Self::ZieglerNichols(e.to_string())
            }
            HarnessError::InvalidScenario(m) => Self::Config(ConfigError::new("<scenario>", m)),
            HarnessError::AssignmentMismatch { .. } => Self::Config(ConfigError::new("joints", e.to_string())),
            HarnessError::InvalidController { joint, ref source } => {
                Self::Config(ConfigError::new(format!("joints[{joint}]"), source.to_string()))
            }
            HarnessError::BudgetTooSmall { .. } => Self::Config(ConfigError::new("budget_per_joint", e.to_string())),
            other => Self::Other(other.to_string()),
        }
    }
}

fn io_error(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Other(format!("{}: {e}", path.display()))
}

fn read_config(path: &Path, key: &str) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::Config(ConfigError::new(key, format!("{}: {e}", path.display()))))
}

fn load_scenario(arg: &ScenarioArg) -> Result<Scenario, CliError> {
    match &arg.scenario {
        None => Ok(Scenario::default_mobile_manipulator()),
        Some(path) => Ok(parse_scenario_json(&read_config(path, "scenario")?)?),
    }
}

fn create_out_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| io_error(dir, e))
}

fn write_file(path: &Path, f: impl FnOnce(&mut BufWriter<fs::File>) -> Result<(), String>) -> Result<(), CliError> {
    let file = fs::File::create(path).map_err(|e| io_error(path, e))?;
    let mut w = BufWriter::new(file);
    f(&mut w).map_err(|e| io_error(path, e))?;
    w.flush().map_err(|e| io_error(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    write_file(path, |w| w.write_all(text.as_bytes()).map_err(|e| e.to_string()))
}

fn write_rollout(path: &Path, trace: &RolloutTrace) -> Result<(), CliError> {
    write_file(path, |w| write_rollout_csv(trace, w).map_err(|e| e.to_string()))
}

fn cmd_sim(args: SimArgs) -> Result<(), CliError> {
    let scenario = load_scenario(&args.scenario)?;
    let controllers = parse_controllers_json(&read_config(&args.controllers, "controllers")?)?;
    if controllers.joints.len() != scenario.n_joints() {
        return Err(CliError::Config(ConfigError::new(
            "joints",
            format!("{} controllers for a {}-joint arm", controllers.joints.len(), scenario.n_joints()),
        )));
    }
    if args.decimate_to_n == Some(0) {
        return Err(CliError::Config(ConfigError::new("decimate_to_n", "must be positive")));
    }
    let weights = CostWeights { decimate_to_n: args.decimate_to_n, ..CostWeights::default() };
    let trace = rollout(&scenario, &controllers)?;
    create_out_dir(&args.out)?;
    write_rollout(&args.out.join("rollout.csv"), &trace)?;
    let summary = CostSummary::new(&trace, &per_joint_costs(&trace, &weights), weights);
    write_text(&args.out.join("costs.json"), &to_json_pretty(&summary))
}

#[derive(Serialize)]
struct TuneSummary {
    seed: u64,
    budget_per_joint: usize,
    baseline: CostSummary,
    tuned: CostSummary,
}

fn cmd_tune(args: TuneArgs) -> Result<(), CliError> {
    let mut cfg = match &args.config {
        Some(path) => parse_run_config_json(&read_config(path, "config")?)?,
        None => RunConfig::default(),
    };
    if args.scenario.scenario.is_some() {
        cfg.scenario = args.scenario.scenario.clone();
    }
    cfg.seed = args.seed.unwrap_or(cfg.seed);
    cfg.budget_per_joint = args.budget_per_joint.unwrap_or(cfg.budget_per_joint);
    cfg.out = args.out.or(cfg.out);
    cfg.decimate_to_n = args.decimate_to_n.or(cfg.decimate_to_n);
    cfg.validate()?;
    let out = cfg.out.clone().ok_or_else(|| ConfigError::new("out", "no output directory given"))?;
    let scenario = load_scenario(&ScenarioArg { scenario: cfg.scenario.clone() })?;

    let mut settings = TuneSettings::new(cfg.seed, cfg.budget_per_joint);
    settings.weights.decimate_to_n = cfg.decimate_to_n;
    let result = staged_tune(&scenario, &settings)?;

    create_out_dir(&out)?;
    write_text(&out.join("zn.json"), &to_json_pretty(&zn_report(&result.zn)))?;
    write_text(&out.join("baseline_controllers.json"), &controllers_to_json(&result.baseline))?;
    write_text(&out.join("best_params.json"), &controllers_to_json(&result.tuned))?;
    for c in &result.campaigns {
        let path = out.join(format!("bo_trace_joint{}.csv", c.joint + 1));
        write_file(&path, |w| write_bo_trace_csv(&c.trace, w).map_err(|e| e.to_string()))?;
    }
    let before = rollout(&scenario, &result.baseline)?;
    let after = rollout(&scenario, &result.tuned)?;
    write_rollout(&out.join("rollout_baseline.csv"), &before)?;
    write_rollout(&out.join("rollout_tuned.csv"), &after)?;
    let summary = TuneSummary {
        seed: cfg.seed,
        budget_per_joint: cfg.budget_per_joint,
        baseline: CostSummary::new(&before, &result.baseline_costs, settings.weights),
        tuned: CostSummary::new(&after, &result.tuned_costs, settings.weights),
    };
    write_text(&out.join("tune_summary.json"), &to_json_pretty(&summary))
}

fn cmd_zn(args: ZnArgs) -> Result<(), CliError> {
    let scenario = load_scenario(&args.scenario)?;
    let results = zn_tune_all(&scenario, &ZnConfig::default())?;
    create_out_dir(&args.out)?;
    write_text(&args.out.join("zn.json"), &to_json_pretty(&zn_report(&results)))?;
    let gains: Vec<_> = results.iter().map(|r| r.gains).collect();
    write_text(&args.out.join("controllers.json"), &controllers_to_json(&ControllerAssignment::baseline(&gains)))
}

fn cmd_compliance(args: ComplianceArgs) -> Result<(), CliError> {
    let scenario = load_scenario(&args.scenario)?;
    let axes = parse_grid_spec(&args.grid)?;
    let n = scenario.n_joints();
    if axes.len() != n {
        return Err(CliError::Config(ConfigError::new(
            "grid",
            format!("{} axes given for a {n}-joint arm", axes.len()),
        )));
    }
    let rows = compliance_sweep(&scenario.arm, &grid_points(&axes)).map_err(|e| CliError::Other(e.to_string()))?;
    create_out_dir(&args.out)?;
    let path = args.out.join("compliance.csv");
    write_file(&path, |w| write_compliance_csv(&rows, n, w).map_err(|e| e.to_string()))
}

/// `APID_THREADS` caps the worker pool used for parallel rollouts.
fn configure_threads() -> Result<(), CliError> {
    let Ok(value) = std::env::var("APID_THREADS") else {
        return Ok(());
    };
    let threads: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| ConfigError::new("APID_THREADS", format!("expected a positive integer, got {value:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| CliError::Other(e.to_string()))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = configure_threads().and_then(|()| match cli.command {
        Command::Sim(a) => cmd_sim(a),
        Command::Tune(a) => cmd_tune(a),
        Command::Zn(a) => cmd_zn(a),
        Command::Compliance(a) => cmd_compliance(a),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
