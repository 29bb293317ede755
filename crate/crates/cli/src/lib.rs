//! Harness library behind the `dbea` binary: configuration, training,
//! checkpointing, benchmark runners, and report emission.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod error;
pub mod evalrun;
pub mod report;
pub mod train;

pub use config::{load_config, parse_config, RunConfig};
pub use error::{CliError, Result};
