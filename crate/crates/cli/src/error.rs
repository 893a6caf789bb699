use std::path::PathBuf;

use incmix_core::Error as CoreError;
use thiserror::Error;

/// Failures of the command-line layer, grouped by exit status.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}, line {line}: {message}")]
    Parse { path: PathBuf, line: u64, message: String },

    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error(transparent)]
    Core(#[from] CoreError),
}

impl CliError {
    pub fn parse(path: impl Into<PathBuf>, line: u64, message: impl Into<String>) -> Self {
        CliError::Parse {
            path: path.into(),
            line,
            message: message.into(),
        }
    }

    pub fn format(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        CliError::Format {
            path: path.into(),
            message: message.into(),
        }
    }

    /// 1 for usage and configuration problems, 2 for unreadable or invalid
    /// data, 3 for numerical failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Io { .. } | CliError::Parse { .. } | CliError::Format { .. } => 2,
            CliError::Core(e) => match e {
                CoreError::InvalidData { .. } => 2,
                CoreError::Numerical { .. } | CoreError::NotPositiveDefinite { .. } => 3,
                CoreError::Config(_) | CoreError::InvalidParameter(_) => 1,
            },
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
