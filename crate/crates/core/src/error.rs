use thiserror::Error;

/// Errors raised by model construction, sampling and estimation.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid data at {location}: {message}")]
    InvalidData { location: String, message: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("numerical failure in {context}: {message}")]
    Numerical { context: String, message: String },

    /// Cholesky factorisation hit a non-positive pivot.
    #[error("matrix is not positive definite (pivot {pivot})")]
    NotPositiveDefinite { pivot: usize },
}

impl Error {
    pub fn data(location: impl Into<String>, message: impl Into<String>) -> Self {
        Error::InvalidData {
            location: location.into(),
            message: message.into(),
        }
    }

    pub fn numerical(context: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Numerical {
            context: context.into(),
            message: message.into(),
        }
    }

    /// Prefix the context of a numerical error, leaving other kinds untouched.
    pub fn within(self, outer: &str) -> Self {
        match self {
            Error::Numerical { context, message } => Error::Numerical {
                context: format!("{outer}: {context}"),
                message,
            },
            Error::NotPositiveDefinite { pivot } => Error::Numerical {
                context: outer.to_string(),
                message: format!("matrix is not positive definite (pivot {pivot})"),
            },
            other => other,
        }
    }

    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::Numerical { .. } | Error::NotPositiveDefinite { .. })
    }
}

pub type Result<T> = std::result::Result<T, Error>;
