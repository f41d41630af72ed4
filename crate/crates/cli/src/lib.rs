//! Command-line front end for `spikefed-core`: experiment files, run
//! directories and the `run`, `compare` and `partition-report` commands.

pub mod commands;
pub mod config;
pub mod error;
pub mod output;

pub use config::{Algorithm, DatasetKind, RunConfig};
pub use error::CliError;
