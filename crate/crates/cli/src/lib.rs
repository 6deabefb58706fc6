//! Command-line harness around `zdq-core`: simulate a source, design an
//! average-cost quantization policy, evaluate it, check the bounds and export
//! plot data.

pub mod commands;
pub mod config;

use std::path::PathBuf;

use thiserror::Error;
use zdq_core::ZdqError;

pub use config::ExperimentConfig;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("{0}")]
    Core(#[from] ZdqError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("value iteration did not converge (see the design report)")]
    NotConverged,
    #[error("{failed} of {total} bound checks failed")]
    VerifyFailed { failed: usize, total: usize },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Core(ZdqError::ModelMismatch { .. }) => 2,
            CliError::NotConverged => 3,
            CliError::VerifyFailed { .. } => 4,
            _ => 1,
        }
    }
}
