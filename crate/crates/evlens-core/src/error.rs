//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by the engine, the patch models and the analysis passes.
#[derive(Debug, Error)]
pub enum Error {
    /// Tensor or layer shapes do not line up.
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    /// A layer was constructed with unsupported parameters.
    #[error("invalid layer: {0}")]
    InvalidLayer(String),

    /// A NaN or infinity showed up where only finite values are allowed.
    #[error("non-finite value: {0}")]
    NonFinite(String),

    /// Class index outside `0..class_count`.
    #[error("class index {index} out of range for {classes} classes")]
    InvalidClass { index: usize, classes: usize },

    /// A dataset was empty or too small for the requested operation.
    #[error("invalid dataset: {0}")]
    InvalidData(String),

    /// Bad argument to a model or analysis routine.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Covariance could not be factorized.
    #[error("covariance not positive definite: {0}")]
    NotPositiveDefinite(String),

    /// A binary or text artifact is malformed. `offset` is the byte
    /// (or line) position where decoding failed.
    #[error("format error in {path} at offset {offset}: {reason}")]
    Format {
        path: String,
        offset: u64,
        reason: String,
    },

    /// Plain I/O failure.
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<String>, offset: u64, reason: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            offset,
            reason: reason.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
