use std::path::PathBuf;

use metastable_core::Error;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] Error),

    #[error("cannot write {}: {source}", path.display())]
    Output { path: PathBuf, source: std::io::Error },

    #[error("{0}")]
    Usage(String),

    #[error("internal: {0}")]
    Internal(String),
}

impl CliError {
    pub fn csv(e: csv::Error) -> Self {
        CliError::Internal(format!("csv: {e}"))
    }

    /// 2 for bad input or configuration, 4 for numerical or consistency failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Core(Error::Config { .. } | Error::InvalidInput(_) | Error::NoSignChange { .. }) => 2,
            CliError::Core(Error::Internal(_) | Error::NumericalFailure(_) | Error::NonConvergence { .. }) => 4,
            CliError::Output { .. } | CliError::Usage(_) => 2,
            CliError::Internal(_) => 4,
        }
    }
}
