//! `rtbm`: fit RTBM densities, derive conditionals, sample and compare.
//!
//! Exit status: 0 on success, 1 when the library rejects the input (invalid
//! model, failed fit, unreadable file), 2 on usage errors.

mod args;
mod commands;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use args::{Assignments, Floats, GridSpec, Ranges, Usage};

#[derive(Debug, Parser)]
#[command(
    name = "rtbm",
    version,
    about = "Riemann-Theta Boltzmann machine densities"
)]
struct Cli {
    /// Target omitted-mass fraction for theta sums.
    #[arg(long, global = true, env = "RTBM_THETA_EPS", default_value_t = rtbm::theta::DEFAULT_EPS)]
    theta_eps: f64,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit a model to a headerless CSV of samples.
    Fit(FitArgs),
    /// Evaluate a model's density on a grid or at given points.
    Density(DensityArgs),
    /// Write the conditional model given fixed values of some coordinates.
    Conditional(ConditionalArgs),
    /// Draw samples from a model.
    Sample(SampleArgs),
    /// Empirical (conditional) density histogram of samples, as JSON.
    Histogram(HistogramArgs),
    /// Mean squared error between two density sources at shared points.
    Mse(MseArgs),
    /// Check a model file against the validity rules.
    Validate(ValidateArgs),
    /// Multivariate Student-t reference distribution.
    #[command(subcommand)]
    Student(StudentCommand),
}

#[derive(Debug, Args)]
struct FitArgs {
    /// Training samples (headerless CSV).
    #[arg(long)]
    data: PathBuf,
    /// Number of hidden units.
    #[arg(long)]
    nh: usize,
    #[arg(long, env = "RTBM_SEED", default_value_t = 0)]
    seed: u64,
    #[arg(long, env = "RTBM_RESTARTS", default_value_t = 5)]
    restarts: usize,
    /// Objective evaluations per restart.
    #[arg(long, env = "RTBM_MAX_EVALS", default_value_t = 50_000)]
    max_evals: usize,
    /// CMA-ES population (default 4 + ⌊3 ln dim⌋).
    #[arg(long)]
    population: Option<usize>,
    #[arg(long, default_value_t = 0.3)]
    sigma0: f64,
    #[arg(long, default_value = "FULL")]
    lattice: rtbm::Lattice,
    /// Fit on standardized columns and map the parameters back.
    #[arg(long)]
    standardize: bool,
    /// Output model file.
    #[arg(long)]
    out: PathBuf,
    /// Trace CSV (eval_count,best_nll); defaults to `<out>.trace.csv`.
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Run metadata JSON; defaults to `<out>.meta.json`.
    #[arg(long)]
    meta: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct PointArgs {
    /// Tensor grid `lo:hi:n[,lo:hi:n…]`.
    #[arg(long, allow_hyphen_values = true, conflicts_with = "points")]
    grid: Option<GridSpec>,
    /// Evaluate at the rows of this CSV instead of a grid.
    #[arg(long)]
    points: Option<PathBuf>,
    /// Zero-based columns of `--points` to use (default: all).
    #[arg(long, value_delimiter = ',', requires = "points")]
    columns: Option<Vec<usize>>,
}

#[derive(Debug, Args)]
struct DensityArgs {
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    at: PointArgs,
    /// Output CSV (default: stdout).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ConditionalArgs {
    #[arg(long)]
    model: PathBuf,
    /// Conditioned coordinates, `idx=value[,idx=value…]`.
    #[arg(long, allow_hyphen_values = true)]
    on: Assignments,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct SampleArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    count: usize,
    #[arg(long, env = "RTBM_SEED", default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct HistogramArgs {
    /// Samples (headerless CSV).
    #[arg(long)]
    samples: PathBuf,
    /// Keep only rows within `--window` of these values and histogram the
    /// remaining coordinates.
    #[arg(long, allow_hyphen_values = true)]
    on: Option<Assignments>,
    /// Half-width of the conditioning window, one value or one per index.
    #[arg(long, value_delimiter = ',', default_value = "0.05")]
    window: Vec<f64>,
    #[arg(long, default_value_t = rtbm::sampling::DEFAULT_BINS)]
    bins: usize,
    /// Explicit bin ranges `lo:hi[,lo:hi]` (default: central 99% of the data).
    #[arg(long, allow_hyphen_values = true)]
    range: Option<Ranges>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct MseArgs {
    /// Model file, histogram JSON or density-grid CSV.
    #[arg(long)]
    reference: PathBuf,
    #[arg(long)]
    candidate: PathBuf,
    /// Points to use when both sources are models.
    #[command(flatten)]
    at: PointArgs,
    /// Also write the report here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ValidateArgs {
    #[arg(long)]
    model: PathBuf,
}

#[derive(Debug, Args)]
struct StudentParams {
    /// Location, comma-separated (default 0,0).
    #[arg(long, allow_hyphen_values = true)]
    mu: Option<Floats>,
    /// Scale matrix, row-major comma-separated (default 2,-1,-1,4).
    #[arg(long, allow_hyphen_values = true)]
    sigma: Option<Floats>,
    /// Degrees of freedom (default 6).
    #[arg(long)]
    nu: Option<f64>,
}

#[derive(Debug, Subcommand)]
enum StudentCommand {
    /// Draw samples.
    Sample {
        #[command(flatten)]
        params: StudentParams,
        #[arg(long)]
        count: usize,
        #[arg(long, env = "RTBM_SEED", default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Analytic conditional density of the free coordinates.
    Conditional {
        #[command(flatten)]
        params: StudentParams,
        #[arg(long, allow_hyphen_values = true)]
        on: Assignments,
        #[command(flatten)]
        at: PointArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            if let Some(usage) = err.downcast_ref::<Usage>() {
                eprintln!("error: {usage}\n\nFor more information, try '--help'.");
                ExitCode::from(2)
            } else {
                eprintln!("error: {err:#}");
                ExitCode::from(1)
            }
        }
    }
}
