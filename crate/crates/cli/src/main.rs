//! `cpreg`: calibrate conformal models over any point regressor's
//! predictions, emit prediction intervals, and evaluate them.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Debug)]
pub enum CliError {
    Core(cpreg_core::Error),
    /// A core error tied to a specific input file.
    CoreAt {
        path: PathBuf,
        source: cpreg_core::Error,
    },
    Config { msg: String },
    OutputCollision { path: PathBuf },
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

impl CliError {
    pub fn class(&self) -> &'static str {
        match self {
            CliError::Core(e) => e.class(),
            CliError::CoreAt { source, .. } => source.class(),
            CliError::Config { .. } => "ConfigError",
            CliError::OutputCollision { .. } => "OutputCollision",
            CliError::Io { .. } => "IoError",
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Core(e) => write!(f, "{e}"),
            CliError::CoreAt { path, source } => write!(f, "{}: {source}", path.display()),
            CliError::Config { msg } => write!(f, "{msg}"),
            CliError::OutputCollision { path } => write!(
                f,
                "output path {} is also an input path",
                path.display()
            ),
            CliError::Io { path, source } => write!(f, "{}: {source}", path.display()),
        }
    }
}

impl From<cpreg_core::Error> for CliError {
    fn from(e: cpreg_core::Error) -> Self {
        CliError::Core(e)
    }
}

#[derive(Parser)]
#[command(
    name = "cpreg",
    version,
    about = "Conformal prediction intervals for point regressors"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a seeded synthetic heteroscedastic dataset CSV
    Synth(SynthArgs),
    /// Fit a difficulty estimator and calibrate a conformal model
    Calibrate(CalibrateArgs),
    /// Emit prediction intervals for a test CSV
    Predict(PredictArgs),
    /// Evaluate a predictions CSV: coverage, widths, difficulty quantiles
    Evaluate(EvaluateArgs),
    /// Grid-search estimator configurations; select the narrowest that
    /// meets the coverage floor
    Sweep(SweepArgs),
}

#[derive(Args)]
pub struct ColumnArgs {
    /// Target column name (default "target")
    #[arg(long)]
    target_col: Option<String>,
    /// Prediction column name (default "pred")
    #[arg(long)]
    pred_col: Option<String>,
    /// Comma-separated feature columns (default: every numeric column
    /// except target/pred)
    #[arg(long)]
    feature_cols: Option<String>,
}

#[derive(Args)]
pub struct SynthArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output CSV path
    #[arg(long, short)]
    out: Option<PathBuf>,
    /// Number of rows
    #[arg(long)]
    n: Option<usize>,
    /// Feature dimensionality
    #[arg(long)]
    dims: Option<usize>,
    /// Noise std at x1 = 0, in dB
    #[arg(long)]
    noise_base: Option<f64>,
    /// Added noise std per unit |x1|, in dB
    #[arg(long)]
    noise_slope: Option<f64>,
    /// Fraction of samples with one-sided noise, in [0,1)
    #[arg(long)]
    noise_skew: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Append a pred column from a baseline KNN regressor with this k
    #[arg(long)]
    baseline_k: Option<usize>,
    /// CSV to fit the baseline on (default: the generated data itself)
    #[arg(long)]
    baseline_from: Option<PathBuf>,
    #[command(flatten)]
    columns: ColumnArgs,
}

#[derive(Args)]
pub struct CalibrateArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Training CSV (difficulty estimator reference set)
    #[arg(long)]
    train: Option<PathBuf>,
    /// Calibration CSV (must carry predictions)
    #[arg(long)]
    cal: Option<PathBuf>,
    /// Output model file
    #[arg(long, short)]
    out: Option<PathBuf>,
    /// Difficulty estimator: knn_std, knn_residual, or target_strangeness
    #[arg(long)]
    kind: Option<String>,
    /// Neighbor count
    #[arg(long)]
    k: Option<usize>,
    /// Sigma stabilizer, in dB
    #[arg(long)]
    beta: Option<f64>,
    /// Enable Mondrian binning over the prediction axis
    #[arg(long)]
    mondrian: bool,
    /// Mondrian bin count
    #[arg(long)]
    bins: Option<usize>,
    /// Minimum calibration rows per Mondrian bin
    #[arg(long)]
    min_bin_size: Option<usize>,
    /// Calibrate a conformal regressor instead of a CPS
    #[arg(long)]
    cr: bool,
    /// CR confidence level in (0,1)
    #[arg(long)]
    confidence: Option<f64>,
    /// CPS lower percentile in (0,100)
    #[arg(long)]
    lower_pct: Option<f64>,
    /// CPS upper percentile in (0,100)
    #[arg(long)]
    upper_pct: Option<f64>,
    /// Skip feature standardization
    #[arg(long)]
    no_standardize: bool,
    #[command(flatten)]
    columns: ColumnArgs,
}

#[derive(Args)]
pub struct PredictArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Calibrated model file
    #[arg(long)]
    model: Option<PathBuf>,
    /// Test CSV (must carry predictions)
    #[arg(long)]
    test: Option<PathBuf>,
    /// Output CSV path
    #[arg(long, short)]
    out: Option<PathBuf>,
    /// CPS lower percentile (default: the model's calibration intent)
    #[arg(long)]
    lower_pct: Option<f64>,
    /// CPS upper percentile (default: the model's calibration intent)
    #[arg(long)]
    upper_pct: Option<f64>,
    /// CR confidence level (default: the model's calibration intent)
    #[arg(long)]
    confidence: Option<f64>,
    #[command(flatten)]
    columns: ColumnArgs,
}

#[derive(Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Predictions CSV produced by `cpreg predict` (targets required)
    #[arg(long)]
    predictions: Option<PathBuf>,
    /// Output directory for report.txt and width_box.csv
    #[arg(long, short)]
    out: Option<PathBuf>,
    #[command(flatten)]
    columns: ColumnArgs,
}

#[derive(Args)]
pub struct SweepArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Training CSV (with predictions)
    #[arg(long)]
    train: Option<PathBuf>,
    /// Calibration CSV (with predictions)
    #[arg(long)]
    cal: Option<PathBuf>,
    /// Tuning CSV the sweep is scored on (with predictions)
    #[arg(long)]
    tune: Option<PathBuf>,
    /// Output directory for sweep.csv and selection.txt
    #[arg(long, short)]
    out: Option<PathBuf>,
    /// Comma-separated estimator configuration ids
    #[arg(long)]
    configs: Option<String>,
    /// Comma-separated neighbor counts
    #[arg(long)]
    k_values: Option<String>,
    /// Comma-separated Mondrian bin counts
    #[arg(long)]
    bin_counts: Option<String>,
    /// Comma-separated beta values
    #[arg(long)]
    betas: Option<String>,
    /// Comma-separated re-split seeds
    #[arg(long)]
    seeds: Option<String>,
    /// Effective-coverage floor for eligibility
    #[arg(long)]
    coverage_floor: Option<f64>,
    #[arg(long)]
    min_bin_size: Option<usize>,
    #[arg(long)]
    lower_pct: Option<f64>,
    #[arg(long)]
    upper_pct: Option<f64>,
    /// Skip feature standardization
    #[arg(long)]
    no_standardize: bool,
    #[command(flatten)]
    columns: ColumnArgs,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth(args) => commands::synth(args),
        Command::Calibrate(args) => commands::calibrate(args),
        Command::Predict(args) => commands::predict(args),
        Command::Evaluate(args) => commands::evaluate(args),
        Command::Sweep(args) => commands::sweep(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}: {e}", e.class());
            ExitCode::FAILURE
        }
    }
}
