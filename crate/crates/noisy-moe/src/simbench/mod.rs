//! Synthetic-data generator, evaluation metrics, and the Monte-Carlo
//! benchmark runner.

mod generator;
mod hungarian;
mod metrics;
mod runner;

pub use generator::{corruption_percent, make_truth, sample_dataset, Dataset, GridRule, SimulationConfig};
pub use hungarian::min_cost_assignment;
pub use metrics::{coefficient_mse, prediction_error, relative_prediction_error};
pub use runner::{
    run_benchmark, BenchConfig, BenchmarkResults, Method, MethodOutcome, ReplicationReport,
    Scenario, SummaryCell,
};
