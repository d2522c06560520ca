//! Library behind the `mln` binary: experiment configs, the four commands
//! and run-directory bookkeeping.

pub mod commands;
pub mod config;
pub mod error;
pub mod manifest;
pub mod schema;

pub use config::ExperimentConfig;
pub use error::{CliError, CliResult};
