//! Config-driven front end: loads an experiment file, runs one mode and
//! writes its artifacts.

pub mod config;
pub mod run;

pub use config::{ExperimentConfig, Mode, Overrides};
pub use run::{execute, Outcome};

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum CliError {
    /// Bad config, bad data or bad flags.
    #[error("{0}")]
    Invalid(String),
    /// Failure after validation passed.
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Invalid(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}
