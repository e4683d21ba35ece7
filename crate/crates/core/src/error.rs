use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Argument outside the domain of the formula being evaluated.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("not found: {0}")]
    NotFound(String),

    /// Quadrature, optimizer or sampler failure. Carries diagnostics.
    #[error("numerical error: {0}")]
    Numerical(String),

    /// Configuration failed validation; `path` names the offending field.
    #[error("invalid value at `{path}`: {message}")]
    Validation { path: String, message: String },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn invalid(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Validation {
            path: path.into(),
            message: message.into(),
        }
    }

    /// Errors caused by user input rather than by numerics.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Domain(_)
                | Error::NotFound(_)
                | Error::Validation { .. }
                | Error::Parse { .. }
                | Error::Json(_)
                | Error::Io(_)
        )
    }
}
