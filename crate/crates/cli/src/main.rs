//! `stratlift`: principal-stratification analysis of holdout experiments.

mod commands;
mod config;
mod render;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use stratlift::models::ModelKind;
use stratlift::presets::Preset;

#[derive(Parser, Debug)]
#[command(name = "stratlift", version, about = "Principal-stratification analysis of advertising holdout experiments")]
pub struct Cli {
    /// JSON config file; command-line flags take precedence over its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Report file (JSON, or CSV for tabular outputs).
    #[arg(long, short, global = true)]
    pub output: Option<PathBuf>,

    /// What to print on stdout when a report file is written elsewhere.
    #[arg(long, global = true, value_enum, default_value_t = Format::Table)]
    pub format: Format,

    /// Increase log verbosity (-v info, -vv debug).
    #[arg(long, short, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Table,
    Json,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Strata shares, bounding means and the expected benefit of stratifying.
    Diagnose(DiagnoseArgs),
    /// Fit a model and report the ATE.
    Analyze(AnalyzeArgs),
    /// Build responsiveness and recency covariates from a purchase panel.
    Covariates(CovariatesArgs),
    /// Generate synthetic data or run a replication study.
    Simulate(SimulateArgs),
    /// Fit a model to synthetic data and check it recovers the truth.
    Recover(RecoverArgs),
}

#[derive(Args, Debug, Clone, Default)]
pub struct InputArgs {
    /// Experiment CSV with columns customer_id, z, y.
    #[arg(long)]
    pub input: Option<PathBuf>,

    /// Map negative outcomes to zero instead of rejecting the file.
    #[arg(long)]
    pub clip_negative: bool,
}

#[derive(Args, Debug, Clone, Default)]
pub struct SamplerArgs {
    #[arg(long)]
    pub chains: Option<usize>,
    /// Warmup iterations per chain.
    #[arg(long)]
    pub warmup: Option<usize>,
    /// Post-warmup draws per chain.
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub target_accept: Option<f64>,
}

#[derive(Args, Debug)]
pub struct DiagnoseArgs {
    #[command(flatten)]
    pub input: InputArgs,
}

#[derive(Args, Debug)]
pub struct AnalyzeArgs {
    #[command(flatten)]
    pub input: InputArgs,

    /// dim, zi, zi-pos, ps or ps-cov.
    #[arg(long, value_parser = parse_model)]
    pub model: Option<ModelKind>,

    /// Comma-separated 0/1 covariate columns (ps-cov).
    #[arg(long, value_delimiter = ',')]
    pub covariates: Option<Vec<String>>,

    /// Also fit the difference-in-means model and report the variance reduction.
    #[arg(long)]
    pub baseline: bool,

    /// Write posterior draws to this CSV file.
    #[arg(long)]
    pub draws: Option<PathBuf>,

    #[command(flatten)]
    pub sampler: SamplerArgs,
}

#[derive(Args, Debug)]
pub struct CovariatesArgs {
    /// Panel CSV with columns customer_id, t, y (purchased), z (exposed).
    #[arg(long)]
    pub panel: Option<PathBuf>,

    /// Optional experiment CSV to report join coverage against.
    #[arg(long)]
    pub input: Option<PathBuf>,

    /// A customer has no recent purchase when recency exceeds this.
    #[arg(long)]
    pub recency_threshold: Option<usize>,
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    #[arg(long, value_parser = parse_preset)]
    pub preset: Option<Preset>,

    /// JSON truth (strata or covariate parameters) instead of a preset.
    #[arg(long)]
    pub truth: Option<PathBuf>,

    #[arg(long)]
    pub seed: Option<u64>,

    /// Customers in a generated dataset.
    #[arg(long)]
    pub n: Option<usize>,

    #[arg(long)]
    pub treat_frac: Option<f64>,

    /// Replications per grid cell (fig2, fig3).
    #[arg(long)]
    pub reps: Option<usize>,

    #[arg(long, value_delimiter = ',')]
    pub n_grid: Option<Vec<usize>>,

    #[arg(long, value_delimiter = ',')]
    pub frac_grid: Option<Vec<f64>>,

    /// JSON summary of a replication study, with the resolved config.
    #[arg(long)]
    pub summary: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct RecoverArgs {
    #[arg(long, value_parser = parse_preset)]
    pub preset: Option<Preset>,

    #[arg(long)]
    pub truth: Option<PathBuf>,

    #[arg(long, value_parser = parse_model)]
    pub model: Option<ModelKind>,

    #[arg(long)]
    pub n: Option<usize>,

    #[command(flatten)]
    pub sampler: SamplerArgs,
}

fn parse_model(s: &str) -> Result<ModelKind, String> {
    s.parse().map_err(|e: stratlift::Error| e.to_string())
}

fn parse_preset(s: &str) -> Result<Preset, String> {
    s.parse().map_err(|e: stratlift::Error| e.to_string())
}

/// Exit status for a failed command: 2 for bad input or configuration,
/// 3 when the data cannot identify the model, 1 otherwise.
fn exit_status(err: &anyhow::Error) -> u8 {
    use stratlift::Error as E;
    match err.downcast_ref::<E>() {
        Some(E::Identification(_)) => 3,
        Some(E::Sampler(_)) | None => 1,
        Some(_) => 2,
    }
}

fn init_threads() {
    let Ok(raw) = std::env::var("STRATLIFT_THREADS") else { return };
    match raw.trim().parse::<usize>() {
        Ok(n) if n > 0 => {
            if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
                log::warn!("could not size the thread pool: {e}");
            }
        }
        _ => log::warn!("ignoring STRATLIFT_THREADS={raw}: expected a positive integer"),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    init_threads();

    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_status(&e))
        }
    }
}
