//! Batch front end: configuration, data ingestion and the `calibrate`,
//! `project`, `validate`, `compare` and `synth` commands.

pub mod commands;
pub mod config;

pub use commands::CliError;
pub use config::{Overrides, RunConfig};
