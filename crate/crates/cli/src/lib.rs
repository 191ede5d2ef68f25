//! Experiment runner for the `critepi` library: configuration, initial
//! profiles, replicate orchestration and output files.

pub mod config;
pub mod init;
pub mod run;

pub use config::{ExperimentConfig, Kind};
pub use run::{run_experiment, Report};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Model(#[from] critepi::Error),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    /// 2 for configuration problems, 3 for numerical failures, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Model(critepi::Error::InvalidArgument(_)) => 2,
            CliError::Model(_) => 3,
            CliError::Io(_) => 1,
        }
    }
}
