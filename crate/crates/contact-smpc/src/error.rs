use std::path::PathBuf;

use thiserror::Error;

/// Failures mapped to process exit codes.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("configuration: {0}")]
    Config(String),
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    /// Outputs were written but the solver stopped short of the tolerance.
    #[error("solver did not converge: {0}")]
    NotConverged(String),
    #[error("{0}")]
    Core(#[from] contact_smpc_core::Error),
    #[error("cannot write {path}: {source}")]
    Write { path: PathBuf, source: std::io::Error },
    #[error("internal error: {0}")]
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Config(_) | CliError::Read { .. } => 1,
            CliError::NotConverged(_) => 2,
            CliError::Core(_) | CliError::Write { .. } | CliError::Internal(_) => 3,
        }
    }
}
