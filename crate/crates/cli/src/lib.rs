//! Experiment harness around `ppssl-core`: config files, seeded multi-run
//! orchestration, record files, diagnostics and the acceptance suite.

pub mod acceptance;
pub mod commands;
pub mod config;
pub mod error;
pub mod records;

pub use config::ExperimentConfig;
pub use error::CliError;
