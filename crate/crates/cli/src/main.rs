//! `marblr`: simulate drifting streams, run online revisers over them and
//! evaluate their calibration, discrimination and regret.

mod commands;
mod pipeline;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "marblr", version, about = "Online Bayesian logistic revision of deployed risk models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a seeded scenario stream and write it as CSV.
    Simulate(SimulateArgs),
    /// Run a reviser over a stream and write metrics, parameters and predictions.
    Run(RunArgs),
    /// Per-quarter calibration curves from a completed run.
    CalibrationCurve(CurveArgs),
    /// Empirical regrets against the locked and oracle revisers, with bounds.
    RegretCheck(RegretArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ShiftArg {
    Initial,
    Cyclical,
    Decay,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum RefitArg {
    All,
    Subset,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    Locked,
    Blr,
    Marblr,
    CumulativeMle,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum RevisionArg {
    /// Chosen from the scenario or the stream's columns.
    Auto,
    Recalibrate,
    Subgroup,
    SubgroupSlope,
    Logistic,
    Ensemble,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum CollapseArg {
    /// Average of branch covariances.
    Averaged,
    /// Adds the spread of branch means.
    Full,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PredictiveArg {
    Probit,
    Mc,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EciArg {
    Binned,
    Logit,
}

/// Where the stream comes from: a generated scenario or a stream file.
#[derive(Debug, Clone, Args)]
pub struct StreamArgs {
    /// Scenario number (1: subgroups, 2: patient variables, 3: refitted ensemble).
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=3), conflicts_with = "input", required_unless_present = "input")]
    pub scenario: Option<u8>,
    /// Stream CSV written by `simulate` (or any file with the same schema).
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = ShiftArg::Initial)]
    pub shift: ShiftArg,
    /// Number of time steps.
    #[arg(long = "T", default_value_t = 100)]
    pub t_steps: usize,
    /// Observations per step.
    #[arg(long, default_value_t = 100)]
    pub n: usize,
    /// Number of patient variables.
    #[arg(long, default_value_t = 10)]
    pub dx: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Cyclical drift period in steps.
    #[arg(long)]
    pub period: Option<f64>,
    /// Refitting of the underlying model for ensembles; subset refits on
    /// scenario 3 also corrupt the refit labels before t = 100.
    #[arg(long, value_enum)]
    pub refit: Option<RefitArg>,
    /// Trailing window (in steps) for subset refitting.
    #[arg(long, default_value_t = 20)]
    pub window: usize,
}

/// Reviser configuration.
#[derive(Debug, Clone, Args)]
pub struct MethodArgs {
    #[arg(long, value_enum, default_value_t = MethodArg::Marblr)]
    pub method: MethodArg,
    #[arg(long, value_enum, default_value_t = RevisionArg::Auto)]
    pub revision: RevisionArg,
    /// Switching probability (MarBLR).
    #[arg(long, default_value_t = 0.1)]
    pub alpha: f64,
    /// Covariance inflation on a switch (MarBLR).
    #[arg(long, default_value_t = 0.5)]
    pub delta2: f64,
    /// Initial revision parameters: `identity` or a comma list.
    #[arg(long, default_value = "identity")]
    pub theta_init: String,
    /// Initial covariance is this multiple of the identity.
    #[arg(long, default_value_t = 1.0)]
    pub sigma_init_scale: f64,
    #[arg(long, value_enum, default_value_t = CollapseArg::Averaged)]
    pub collapse: CollapseArg,
    #[arg(long, value_enum, default_value_t = PredictiveArg::Probit)]
    pub predictive: PredictiveArg,
    /// Draws per prediction when `--predictive mc`.
    #[arg(long, default_value_t = 1000)]
    pub mc_samples: usize,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub stream: StreamArgs,
    /// Output file; stdout when absent.
    #[arg(short = 'o', long = "out")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub stream: StreamArgs,
    #[command(flatten)]
    pub method: MethodArgs,
    /// Output directory for metrics.csv, params.csv, predictions.csv and summary.json.
    #[arg(short = 'o', long = "out-dir", visible_alias = "out")]
    pub out_dir: PathBuf,
    /// Steps in the trailing window of the ECI/AUC columns.
    #[arg(long, default_value_t = 10)]
    pub metric_window: usize,
    #[arg(long, value_enum, default_value_t = EciArg::Binned)]
    pub eci: EciArg,
    /// Bins of the binned ECI estimator.
    #[arg(long, default_value_t = 10)]
    pub bins: usize,
    /// Add a regret report to the summary (BLR and MarBLR only).
    #[arg(long)]
    pub with_regret: bool,
    #[command(flatten)]
    pub regret: BoundArgs,
}

#[derive(Debug, Clone, Args)]
pub struct BoundArgs {
    /// Curvature constant of the bounds: 1 or 0.25.
    #[arg(long = "c", default_value = "1", value_parser = parse_c)]
    pub c: f64,
    /// Shift times as a comma list; defaults to the generator's for scenarios
    /// and to a single segment for stream files.
    #[arg(long)]
    pub tau: Option<String>,
    /// Subsequence of `--tau` for the MarBLR bound; minimized over when absent.
    #[arg(long)]
    pub tau_prime: Option<String>,
}

#[derive(Debug, Args)]
pub struct CurveArgs {
    /// Directory written by `run`.
    #[arg(long, required_unless_present = "input", conflicts_with = "input")]
    pub run_dir: Option<PathBuf>,
    /// A predictions.csv file.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Bins per quarter.
    #[arg(long, default_value_t = 10)]
    pub bins: usize,
    /// Output file; stdout when absent.
    #[arg(short = 'o', long = "out")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RegretArgs {
    #[command(flatten)]
    pub stream: StreamArgs,
    #[command(flatten)]
    pub method: MethodArgs,
    #[command(flatten)]
    pub bounds: BoundArgs,
    /// Output file; stdout when absent.
    #[arg(short = 'o', long = "out")]
    pub out: Option<PathBuf>,
}

fn parse_c(s: &str) -> Result<f64, String> {
    match s.trim() {
        "1" | "1.0" => Ok(1.0),
        "0.25" | ".25" => Ok(0.25),
        other => Err(format!("c must be 1 or 0.25, got {other}")),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("MARBLR_LOG", "warn"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate(a) => commands::simulate(&a),
        Command::Run(a) => commands::run(&a),
        Command::CalibrationCurve(a) => commands::calibration_curve(&a),
        Command::RegretCheck(a) => commands::regret_check(&a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
