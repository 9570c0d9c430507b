//! Command-line harness around `taskfilter-core`: simulation, ingestion
//! checks, change and filter evaluation, filter contrasts and sweeps, each
//! writing CSV reports to an output directory.

pub mod commands;
pub mod config;
pub mod error;

pub use config::ExperimentConfig;
pub use error::{CliError, Result};
