//! Command-line interface definition.
//!
//! Most tuning flags are optional at the clap level; resolution order is
//! flag, then config-file value, then built-in default.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(
    name = "noisy-moe",
    about = "Semi-supervised noisy mixture-of-experts: fit, predict, simulate, bench",
    version
)]
pub struct Cli {
    /// Master RNG seed (fallback: NOISY_MOE_SEED env var, then 42).
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Worker threads (default: available parallelism). Results are
    /// identical for any thread count; 1 minimizes scheduling overhead on
    /// small jobs.
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    /// TOML config file; explicit flags override file values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Fit a model from labeled (and optionally unlabeled) CSV data.
    Fit(FitArgs),
    /// Predict responses for a covariate CSV with a saved model.
    Predict(PredictArgs),
    /// Generate synthetic labeled/unlabeled/test CSVs from the benchmark model.
    Simulate(SimulateArgs),
    /// Run the Monte-Carlo benchmark grid and write per-replication results.
    Bench(BenchArgs),
}

#[derive(Args, Debug)]
pub struct FitArgs {
    /// Labeled data CSV (header row; response column named by --response).
    #[arg(long)]
    pub labeled: PathBuf,

    /// Unlabeled covariate CSV (required for noisyss and moess).
    #[arg(long)]
    pub unlabeled: Option<PathBuf>,

    /// Response column name (default: the last column of the labeled CSV).
    #[arg(long)]
    pub response: Option<String>,

    /// Estimator: noisyss, moess, moeline, or moequad.
    #[arg(long)]
    pub method: Option<String>,

    /// Number of experts, or `auto` for BIC selection over 1..=k-max.
    #[arg(long)]
    pub k: Option<String>,

    /// Largest candidate for --k auto.
    #[arg(long)]
    pub k_max: Option<usize>,

    /// Retaining fraction of the trimmed expert fits, in [0.5, 1].
    #[arg(long)]
    pub alpha: Option<f64>,

    /// Covariate pool for the mixture fit: all or unlabeled-only.
    #[arg(long)]
    pub gmm_pool: Option<String>,

    /// Disable the post-trimming efficiency refit.
    #[arg(long)]
    pub no_reweight: bool,

    /// Drop labeled rows with covariate norm above this radius before
    /// fitting.
    #[arg(long)]
    pub screen_radius: Option<f64>,

    /// Output model file (JSON, schema v1).
    #[arg(long)]
    pub out: PathBuf,

    /// Optional JSON fit report (cluster sizes, retained counts, traces,
    /// BIC table when --k auto).
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct PredictArgs {
    /// Saved model file.
    #[arg(long)]
    pub model: PathBuf,

    /// Covariate CSV (header row; columns in training order).
    #[arg(long)]
    pub data: PathBuf,

    /// Output CSV with a single `yhat` column.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    /// Output directory for labeled.csv, unlabeled.csv, test.csv, truth.json.
    #[arg(long)]
    pub out_dir: PathBuf,

    #[arg(long)]
    pub k: Option<usize>,

    #[arg(long)]
    pub p: Option<usize>,

    /// Diagonal of the label transition matrix (1.0 = no corruption).
    #[arg(long)]
    pub p0: Option<f64>,

    #[arg(long)]
    pub n_labeled: Option<usize>,

    #[arg(long)]
    pub n_unlabeled: Option<usize>,

    #[arg(long)]
    pub n_test: Option<usize>,

    /// Expert noise standard deviation.
    #[arg(long)]
    pub sigma: Option<f64>,

    /// Also write latents.csv with the latent cluster and expert labels.
    #[arg(long)]
    pub emit_latents: bool,
}

#[derive(Args, Debug)]
pub struct BenchArgs {
    /// Output CSV (one row per replication).
    #[arg(long)]
    pub out: PathBuf,

    /// Comma-separated corruption grid as p0 values, e.g. `1.0,0.9,0.8`.
    #[arg(long)]
    pub grid_p0: Option<String>,

    /// Comma-separated labeled-size grid, e.g. `300,600,1000,2000`.
    #[arg(long)]
    pub grid_n: Option<String>,

    /// Fixed p0 when --grid-n is used.
    #[arg(long)]
    pub p0: Option<f64>,

    /// Fixed labeled size when --grid-p0 is used.
    #[arg(long)]
    pub n_labeled: Option<usize>,

    /// Comma-separated methods (noisyss, moess, moeline, moequad).
    #[arg(long)]
    pub methods: Option<String>,

    #[arg(long)]
    pub reps: Option<usize>,

    #[arg(long)]
    pub k: Option<usize>,

    #[arg(long)]
    pub p: Option<usize>,

    #[arg(long)]
    pub sigma: Option<f64>,

    #[arg(long)]
    pub n_test: Option<usize>,

    /// Fit the covariate mixture from finite simulated unlabeled data
    /// instead of injecting the true mixture parameters.
    #[arg(long)]
    pub finite_x: bool,

    /// Unlabeled draw size in finite-x mode.
    #[arg(long)]
    pub n_unlabeled: Option<usize>,

    /// Draw the simulation truth once instead of once per replication.
    #[arg(long)]
    pub freeze_truth: bool,

    /// Retaining fraction of the trimmed expert fits.
    #[arg(long)]
    pub alpha: Option<f64>,

    /// Disable the post-trimming efficiency refit.
    #[arg(long)]
    pub no_reweight: bool,
}
