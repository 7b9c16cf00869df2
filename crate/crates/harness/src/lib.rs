//! Orchestration for fixed-rate perception-distortion experiments: config
//! loading, image folders, the multi-rate procedure and its manifest.

pub mod cli;
pub mod config;
pub mod dataset;
pub mod error;
pub mod experiment;

pub use config::{load_config, ExperimentConfig};
pub use error::{HarnessError, Result};
pub use experiment::{manifest_hash, run_experiment, Manifest};
