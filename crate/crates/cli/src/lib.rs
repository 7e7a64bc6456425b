//! Command-line experiments for the `thermoform` library: configuration,
//! subcommand runners and the summary report.

pub mod config;
pub mod error;
pub mod run;

pub use config::{ExperimentConfig, Overrides};
pub use error::CliError;
pub use run::{emit_report, run_subcommand, Check, Manifest, Subcommand};
