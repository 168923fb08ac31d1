//! Experiment harness: configuration, the benchmark matrix, artifact
//! persistence and trajectory rendering. The CLI binary is a thin wrapper
//! over this module.

pub mod bench;
pub mod config;
pub mod persist;
pub mod render;

pub use bench::{
    aggregate, run_matrix, run_one, to_csv, train_for_seed, Aggregate, BenchReport, BenchRow,
    HarnessError,
};
pub use config::{parse_config, parse_seeds, ExperimentConfig, Method};
pub use persist::Manifest;
