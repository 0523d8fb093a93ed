//! `evodiff` command-line harness.
//!
//! Exit codes: 0 success, 1 partial failure, 2 total failure or bad input.

mod commands;
mod overrides;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "evodiff", version, about = "Diffusion ODE samplers on analytic oracles")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run one solver and write its per-step records.
    Sample(SampleArgs),
    /// Estimate convergence orders against a fine reference grid.
    Convergence(ConvergenceArgs),
    /// Run a solver × budget × seed matrix and write metrics and a manifest.
    Compare(CompareArgs),
    /// Variance, entropy and decomposition diagnostics.
    Diagnose(DiagnoseArgs),
    /// Compare the closed-form ζ*/η* against a grid search.
    OracleCheck(OracleCheckArgs),
}

/// Problem setup shared by the sampling subcommands. Flags override the config file.
#[derive(Debug, Clone, Default, Args)]
pub struct ProblemArgs {
    /// TOML experiment config.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// anisotropic (alias gaussian), standard, four_mode (alias gmm), custom.
    #[arg(long)]
    pub dist: Option<String>,
    #[arg(long)]
    pub dim: Option<u64>,
    /// TOML file with `[[component]]` tables; implies `--dist custom`.
    #[arg(long)]
    pub components: Option<PathBuf>,
    /// vp_linear, vp_cosine or edm.
    #[arg(long)]
    pub schedule: Option<String>,
    /// logsnr, uniform or karras.
    #[arg(long)]
    pub grid: Option<String>,
    #[arg(long)]
    pub rho: Option<f64>,
    #[arg(long)]
    pub beta0: Option<f64>,
    #[arg(long)]
    pub beta1: Option<f64>,
    #[arg(long)]
    pub t_start: Option<f64>,
    #[arg(long)]
    pub t_end: Option<f64>,
}

/// EVODiff settings.
#[derive(Debug, Clone, Default, Args)]
pub struct EvoArgs {
    #[arg(long)]
    pub mu: Option<f64>,
    /// logsnr, normvar, arctan, refined or confidence.
    #[arg(long)]
    pub r_strategy: Option<String>,
    /// Confidence weight β for `--r-strategy confidence`.
    #[arg(long)]
    pub beta: Option<f64>,
    /// Reuse the probe evaluation (one evaluation per step).
    #[arg(long, conflicts_with = "fresh_probe")]
    pub reuse_probe: bool,
    /// Evaluate the model afresh at every corrected state.
    #[arg(long)]
    pub fresh_probe: bool,
    #[arg(long, value_enum)]
    pub zeta_map: Option<ZetaMapArg>,
    #[arg(long, value_enum)]
    pub zeta_formula: Option<FormulaArg>,
    #[arg(long, value_enum)]
    pub eta_formula: Option<FormulaArg>,
    #[arg(long, value_enum)]
    pub weight: Option<WeightArg>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ZetaMapArg {
    Plain,
    #[value(alias = "sigma_scaled")]
    Scaled,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum FormulaArg {
    Literal,
    Analytic,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum WeightArg {
    Balanced,
    Literal,
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    #[command(flatten)]
    pub problem: ProblemArgs,
    #[command(flatten)]
    pub evo: EvoArgs,
    #[arg(long)]
    pub solver: Option<String>,
    #[arg(long, conflicts_with = "nfe")]
    pub steps: Option<usize>,
    /// Step count chosen as the largest that fits this many evaluations.
    #[arg(long)]
    pub nfe: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Trajectories to draw.
    #[arg(long, default_value_t = 1)]
    pub samples: usize,
    /// Step records of the first trajectory (stdout if omitted).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Final states, one row per trajectory.
    #[arg(long)]
    pub samples_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ConvergenceArgs {
    #[command(flatten)]
    pub problem: ProblemArgs,
    #[command(flatten)]
    pub evo: EvoArgs,
    /// Comma-separated solver names.
    #[arg(long, value_delimiter = ',')]
    pub solvers: Vec<String>,
    /// Comma-separated step counts.
    #[arg(long = "Ns", alias = "ns", value_delimiter = ',')]
    pub ns: Vec<usize>,
    /// Reference step count.
    #[arg(long = "ref", default_value_t = 5120)]
    pub n_ref: usize,
    /// Initial states per seed.
    #[arg(long, default_value_t = 64)]
    pub trials: usize,
    #[arg(long, value_delimiter = ',')]
    pub seeds: Vec<u64>,
    /// Metric rows (stdout if omitted).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    #[command(flatten)]
    pub problem: ProblemArgs,
    #[command(flatten)]
    pub evo: EvoArgs,
    #[arg(long, value_delimiter = ',')]
    pub solvers: Vec<String>,
    #[arg(long, value_delimiter = ',', conflicts_with = "nfe")]
    pub steps: Vec<usize>,
    #[arg(long, value_delimiter = ',')]
    pub nfe: Vec<usize>,
    #[arg(long, value_delimiter = ',')]
    pub seeds: Vec<u64>,
    /// sliced_wasserstein, frechet, mean_error.
    #[arg(long, value_delimiter = ',')]
    pub metrics: Vec<String>,
    #[arg(long)]
    pub samples: Option<u64>,
    #[arg(long)]
    pub step_records: bool,
    #[arg(long)]
    pub trajectory: bool,
    /// Output directory; `EVODIFF_OUT_DIR` takes precedence.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Check {
    /// Variance/bias split of the reconstruction error.
    Decomposition,
    /// Sign of the entropy change over a ratio × variance-ratio grid.
    EntropyScan,
    /// Data- vs noise-prediction step variances.
    VarianceOrder,
    /// Per-step transition variance of a solver.
    Entropy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum CenteringArg {
    Forward,
    Marginal,
}

#[derive(Debug, Args)]
pub struct DiagnoseArgs {
    #[arg(long, value_enum)]
    pub check: Check,
    #[command(flatten)]
    pub problem: ProblemArgs,
    #[command(flatten)]
    pub evo: EvoArgs,
    /// Solver for `--check entropy`.
    #[arg(long, default_value = "evodiff")]
    pub solver: String,
    #[arg(long, default_value_t = 20)]
    pub steps: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Monte-Carlo samples per step.
    #[arg(long, default_value_t = 10_000)]
    pub samples: usize,
    #[arg(long, value_enum, default_value = "forward")]
    pub centering: CenteringArg,
    /// CSV output (stdout if omitted).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Report {
    Csv,
    Summary,
}

#[derive(Debug, Args)]
pub struct OracleCheckArgs {
    #[arg(long, default_value_t = 1000)]
    pub instances: usize,
    #[arg(long, default_value_t = 3)]
    pub seed: u64,
    #[arg(long, default_value_t = 8)]
    pub dim: usize,
    #[arg(long, value_enum, default_value = "summary")]
    pub report: Report,
    /// Report destination (stdout if omitted).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Sample(a) => commands::sample(&a),
        Command::Convergence(a) => commands::convergence(&a),
        Command::Compare(a) => commands::compare(&a),
        Command::Diagnose(a) => commands::diagnose(&a),
        Command::OracleCheck(a) => commands::oracle_check(&a),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
