//! The `contextnav` command-line driver: scene and dataset generation,
//! graph building, retrieval, simulation, dataset-size sweeps, latency
//! benchmarks and the fleet server.

pub mod bench;
pub mod cli;
pub mod commands;
pub mod config;
pub mod output;
pub mod report;

pub use config::{BenchConfig, ExperimentConfig};
