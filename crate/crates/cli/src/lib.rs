//! Batch experiment runner: configs in, CSV/JSON traces and SVG plots out.
//!
//! Exit codes are a stable contract: 0 success, 1 acceptance failure,
//! 2 usage or config error, 3 numerical failure.

pub mod config;
pub mod error;
pub mod output;
pub mod plot;
pub mod run;
pub mod verify;

pub use config::ExperimentConfig;
pub use error::CliError;
