//! Experiment runner for collective-spin feedback fidelity bounds: scenario
//! computations, flat-file configuration, and manifest-first CSV/JSON output.

pub mod config;
pub mod error;
pub mod output;
pub mod scenarios;

pub use error::CliError;
