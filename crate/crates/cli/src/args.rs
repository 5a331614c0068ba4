//! Command-line definition.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(
    name = "funfem",
    version,
    about = "Model-based clustering of sampled curves in a discriminative functional subspace"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Smooth curves onto a basis and fit one mixture model at a fixed K.
    Fit(FitArgs),
    /// Grid-search models and cluster counts, scored by AIC, BIC and the
    /// slope heuristic.
    Select(SelectArgs),
    /// Fit a model, then select discriminative basis functions with an
    /// l1 penalty.
    Sparse(SparseArgs),
    /// Run the Monte-Carlo K-selection experiment on simulated curves.
    Simulate(SimulateArgs),
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// Long-format CSV file of observations.
    #[arg(long)]
    pub input: PathBuf,
    /// Input flavor: `generic` (id,time,value) or `bss`
    /// (station_id,city,timestamp,bikes,docks).
    #[arg(long, default_value = "generic")]
    pub format: String,
}

#[derive(Debug, Args)]
pub struct BasisArgs {
    /// Basis family: `fourier` or `bspline`.
    #[arg(long, default_value = "fourier")]
    pub basis: String,
    /// Number of basis functions (odd for fourier; interior knots + order
    /// for bspline).
    #[arg(long)]
    pub p: usize,
    /// Fourier period in the time unit of the data. For `bss` input the
    /// time unit is hours and this defaults to 168 (one week); otherwise it
    /// defaults to the observed time span.
    #[arg(long)]
    pub period_hours: Option<f64>,
    /// B-spline order (4 = cubic).
    #[arg(long, default_value_t = 4)]
    pub spline_order: usize,
}

#[derive(Debug, Args)]
pub struct TuningArgs {
    /// Base random seed; restarts use seed, seed+1, ...
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Number of restarts per fit.
    #[arg(long, default_value_t = 5)]
    pub restarts: usize,
    /// Relative log-likelihood convergence tolerance.
    #[arg(long, default_value_t = 1e-6)]
    pub tol: f64,
    /// Iteration cap per restart.
    #[arg(long, default_value_t = 100)]
    pub max_iter: usize,
    /// Initialization: `kmeans`, `random` or `hclust` (Ward linkage).
    #[arg(long, default_value = "kmeans")]
    pub init: String,
}

#[derive(Debug, Args)]
pub struct OutputArgs {
    /// Directory receiving the CSV/JSON artifacts.
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Number of grid points for exported curves.
    #[arg(long, default_value_t = 101)]
    pub grid_points: usize,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub basis: BasisArgs,
    /// Covariance parameterization, e.g. `DFM[Sigma_k,beta]` or
    /// `DFM[alpha_kj,beta]`.
    #[arg(long)]
    pub model: String,
    /// Number of clusters.
    #[arg(long)]
    pub k: usize,
    #[command(flatten)]
    pub tuning: TuningArgs,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Args)]
pub struct SelectArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub basis: BasisArgs,
    /// Candidate models (repeatable); all 12 when omitted.
    #[arg(long)]
    pub model: Vec<String>,
    #[arg(long, default_value_t = 2)]
    pub k_min: usize,
    #[arg(long, default_value_t = 10)]
    pub k_max: usize,
    /// Criterion whose best cell gets the full artifact export.
    #[arg(long, default_value = "bic")]
    pub criterion: String,
    #[command(flatten)]
    pub tuning: TuningArgs,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Args)]
pub struct SparseArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub basis: BasisArgs,
    #[arg(long)]
    pub model: String,
    #[arg(long)]
    pub k: usize,
    /// l1 penalty on the discriminative loadings.
    #[arg(long)]
    pub lambda: f64,
    #[command(flatten)]
    pub tuning: TuningArgs,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Scenario `a` or `b`.
    #[arg(long, default_value = "a")]
    pub scenario: String,
    /// Cluster-4 generator for scenario a: `corrected` or `printed`.
    #[arg(long, default_value = "corrected")]
    pub variant: String,
    /// Monte-Carlo repetitions.
    #[arg(long, default_value_t = 20)]
    pub runs: usize,
    /// Models to tally (repeatable).
    #[arg(long, required = true)]
    pub model: Vec<String>,
    #[arg(long, default_value_t = 2)]
    pub k_min: usize,
    #[arg(long, default_value_t = 10)]
    pub k_max: usize,
    /// Curves per run.
    #[arg(long, default_value_t = 100)]
    pub n: usize,
    /// Fourier basis size for smoothing.
    #[arg(long, default_value_t = 25)]
    pub p: usize,
    #[command(flatten)]
    pub tuning: TuningArgs,
    #[command(flatten)]
    pub output: OutputArgs,
}
