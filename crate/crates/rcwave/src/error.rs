use std::path::PathBuf;

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// An operation was called with arguments that violate its contract.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A model or run configuration is internally inconsistent.
    #[error("configuration error: {0}")]
    Config(String),

    /// A file exists but its contents do not match the expected format.
    #[error("format error in {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    /// A checkpoint was produced under a different configuration.
    #[error("config hash mismatch: checkpoint has {found}, current config is {expected}")]
    ConfigHashMismatch { expected: String, found: String },

    /// Training produced a non-finite loss or parameter.
    #[error("non-finite value in `{term}` at step {step}")]
    NonFinite { term: String, step: usize },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{0}")]
    Json(#[from] serde_json::Error),

    #[error("{0}")]
    Toml(#[from] toml::de::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn format(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            reason: reason.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
