use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "tvvar", version, about = "Online tv-VAR estimation, spectral connectivity and event networks")]
pub struct Cli {
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate a cosine-coefficient tv-VAR to CSV, plus the true coefficients.
    Simulate(SimulateArgs),
    /// Stream coefficient estimates, one record per post-warmup sample.
    Estimate(EstimateArgs),
    /// Stream band-averaged coherence, partial coherence and PDC.
    Connectivity(ConnectivityArgs),
    /// Classify edges before/after events from connectivity records.
    Network(NetworkArgs),
    /// Timing tables, MSE sweeps and transfer studies.
    Bench(BenchArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum MethodArg {
    Sope,
    Gsope,
    Kf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ScopeArg {
    Epoch,
    PreEvent,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum FormatArg {
    Jsonl,
    Binary,
}

#[derive(Debug, Args, Default)]
pub struct IoArgs {
    /// Input file (`-` or absent for stdin).
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Output file (`-` or absent for stdout).
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EstimatorArgs {
    #[arg(long, value_enum)]
    pub method: Option<MethodArg>,
    /// Smoothing strength (also called alpha).
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Momentum weight in [0, 1].
    #[arg(long)]
    pub beta: Option<f64>,
    /// Kalman state-noise variance per coordinate.
    #[arg(long = "q-sigma")]
    pub q_sigma: Option<f64>,
    /// Autoregressive order K.
    #[arg(long)]
    pub order: Option<usize>,
    /// Kalman covariance memory budget in MiB.
    #[arg(long = "kf-budget-mib")]
    pub kf_budget_mib: Option<u64>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub io: IoArgs,
    /// Where to write the true coefficients (records).
    #[arg(long)]
    pub truth: Option<PathBuf>,
    /// Channel count when no simulation design is configured.
    #[arg(long)]
    pub channels: Option<usize>,
    /// Sample count when no simulation design is configured.
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long)]
    pub order: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct EstimateArgs {
    #[command(flatten)]
    pub io: IoArgs,
    #[command(flatten)]
    pub est: EstimatorArgs,
}

#[derive(Debug, Args)]
pub struct ConnectivityArgs {
    #[command(flatten)]
    pub io: IoArgs,
    #[command(flatten)]
    pub est: EstimatorArgs,
    /// Bands as `name:lo-hi`, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub bands: Vec<String>,
    /// Sampling frequency in Hz.
    #[arg(long = "fs")]
    pub omega_s: Option<f64>,
    /// Frequency grid spacing in Hz.
    #[arg(long)]
    pub spacing: Option<f64>,
}

#[derive(Debug, Args)]
pub struct NetworkArgs {
    #[command(flatten)]
    pub io: IoArgs,
    /// Events as `label@t`, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub events: Vec<String>,
    /// Half window in samples.
    #[arg(long)]
    pub window: Option<usize>,
    /// Threshold quantiles, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub quantile: Vec<f64>,
    /// Measures: coherence, partial_coherence, pdc.
    #[arg(long, value_delimiter = ',')]
    pub measures: Vec<String>,
    #[arg(long, value_enum)]
    pub scope: Option<ScopeArg>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[command(subcommand)]
    pub kind: BenchKind,
}

#[derive(Debug, Args)]
pub struct BenchCommon {
    #[command(flatten)]
    pub io: IoArgs,
    #[command(flatten)]
    pub est: EstimatorArgs,
    #[arg(long, value_enum)]
    pub format: Option<FormatArg>,
    #[arg(long)]
    pub replicates: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum BenchKind {
    /// Per-iteration wall time over a (K, P) grid.
    Time {
        #[command(flatten)]
        common: BenchCommon,
        #[arg(long = "p", value_delimiter = ',')]
        ps: Vec<usize>,
        #[arg(long = "k", value_delimiter = ',')]
        ks: Vec<usize>,
        #[arg(long)]
        iterations: Option<usize>,
        #[arg(long = "methods", value_enum, value_delimiter = ',')]
        methods: Vec<MethodArg>,
    },
    /// MSE over lambda (SOPE) and q-sigma (KF) grids.
    Mse {
        #[command(flatten)]
        common: BenchCommon,
        #[arg(long, value_delimiter = ',')]
        lambdas: Vec<f64>,
        #[arg(long = "q-sigmas", value_delimiter = ',')]
        q_sigmas: Vec<f64>,
    },
    /// Run tuned hyperparameters on a larger design; quantile envelopes.
    Transfer {
        #[command(flatten)]
        common: BenchCommon,
    },
    /// Error before and after a coefficient discontinuity, over lambda.
    Jump {
        #[command(flatten)]
        common: BenchCommon,
        #[arg(long, value_delimiter = ',')]
        lambdas: Vec<f64>,
    },
}
