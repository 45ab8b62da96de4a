use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error: {0}")]
    Parse(String),

    /// An input invariant does not hold. `field` is a dotted path into the scenario.
    #[error("invalid value for `{field}`: {message}")]
    Validation { field: String, message: String },

    /// A model function was evaluated outside its domain.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("layout mismatch: expected {expected} values, got {got}")]
    LayoutMismatch { expected: usize, got: usize },

    #[error("non-finite value encountered in {0}")]
    NonFinite(String),

    #[error("serialization error: {0}")]
    Serialize(String),
}

impl Error {
    pub(crate) fn validation(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Validation {
            field: field.into(),
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
