//! Error type shared by every module in the crate.

use std::path::PathBuf;

use thiserror::Error;

/// Result alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Bad argument to an operation (length mismatch, too few inputs, ...).
    #[error("invalid argument: {0}")]
    Argument(String),

    /// Matrix or sequence shapes are incompatible.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// Invalid model, training, or experiment configuration.
    #[error("configuration error: {0}")]
    Config(String),

    /// A file does not follow the expected on-disk format.
    #[error("format error in {path}: {msg}")]
    Format { path: PathBuf, msg: String },

    /// A recording failed validation.
    #[error("recording `{recording}` failed validation on `{field}`: {msg}")]
    Validation {
        recording: String,
        field: String,
        msg: String,
    },

    /// Internal consistency violated (e.g. an output step not covered by any window).
    #[error("integrity error: {0}")]
    Integrity(String),

    /// API used out of order (e.g. backward before forward).
    #[error("usage error: {0}")]
    Usage(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn arg(msg: impl Into<String>) -> Self {
        Error::Argument(msg.into())
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn format(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            msg: msg.into(),
        }
    }
}
