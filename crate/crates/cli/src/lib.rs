//! Command-line orchestration of the experiment stages.

pub mod config;
pub mod error;
pub mod fixture;
pub mod runner;
pub mod stages;

pub use config::{validate_config, ConfigIssue, RunConfig};
pub use error::CliError;
