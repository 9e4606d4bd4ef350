//! Experiment driver for `domcert`: CharTask data generation, n-gram
//! training, evaluation, certification, sweeps and benchmark-at-epsilon
//! scoring, written as a reproducible bundle of plot-ready files.

pub mod bench;
pub mod config;
pub mod error;
pub mod manifest;
pub mod pipeline;

pub use bench::{bench_at_epsilon, compare_g_vs_l_accuracy, AccuracyTable, BenchAtEpsResult};
pub use config::ExperimentConfig;
pub use error::{exit_code, StageError};
pub use manifest::Manifest;
pub use pipeline::{run_experiment, RunSummary};
