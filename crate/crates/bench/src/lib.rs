//! Experiment runner: fits the clustering forecasters and naive baselines on
//! one dataset, scores held-out forecasts and writes CSV and markdown tables.

pub mod config;
pub mod dataset;
pub mod error;
pub mod experiment;
pub mod multi;
pub mod report;
pub mod seeds;

pub use config::{ExperimentConfig, ModelKind, Scale, SynthConfig};
pub use error::{BenchError, Result};
pub use experiment::run_experiment;
pub use multi::run_multivariate_comparison;
