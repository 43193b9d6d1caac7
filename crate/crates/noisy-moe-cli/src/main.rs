//! `noisy-moe`: fit, predict, simulate, and benchmark noisy
//! mixture-of-experts models from the command line.
//!
//! Exit codes: 0 success, 2 usage error, 3 data error (parse/schema/model
//! file), 4 numeric failure during fitting.

mod args;
mod commands;
mod config;
mod data;

use std::process::ExitCode;

use clap::Parser;

use args::{Cli, Command};
use config::FileConfig;
use noisy_moe::Error as CoreError;

/// CLI-level error split: usage problems versus errors from the library.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Core(CoreError),
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        CliError::Core(e)
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "{m}"),
            CliError::Core(e) => write!(f, "{e}"),
        }
    }
}

fn exit_code(e: &CliError) -> u8 {
    match e {
        CliError::Usage(_) => 2,
        CliError::Core(core) => match core {
            CoreError::Parse { .. }
            | CoreError::SchemaMismatch(_)
            | CoreError::ModelVersionMismatch { .. }
            | CoreError::Io(_)
            | CoreError::Serde(_) => 3,
            CoreError::InvalidConfig(_) => 2,
            _ => 4,
        },
    }
}

fn resolve_seed(flag: Option<u64>, file: &FileConfig) -> u64 {
    flag.or(file.seed)
        .or_else(|| {
            std::env::var("NOISY_MOE_SEED")
                .ok()
                .and_then(|s| s.parse().ok())
        })
        .unwrap_or(42)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let file = match FileConfig::load(cli.config.as_deref()) {
        Ok(f) => f,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(2);
        }
    };
    let seed = resolve_seed(cli.seed, &file);
    let threads = cli
        .threads
        .or(file.threads)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    if let Err(e) = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
    {
        eprintln!("error: could not configure the thread pool: {e}");
        return ExitCode::from(2);
    }

    let result = match &cli.command {
        Command::Fit(a) => commands::run_fit(a, &file, seed),
        Command::Predict(a) => commands::run_predict(a),
        Command::Simulate(a) => commands::run_simulate(a, &file, seed),
        Command::Bench(a) => commands::run_bench(a, &file, seed),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
