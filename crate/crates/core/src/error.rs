//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Tensor shapes incompatible with the requested operation.
    #[error("dimension error: {0}")]
    Dimension(String),

    /// A layer or model was configured inconsistently.
    #[error("configuration error: {0}")]
    Config(String),

    /// Input data violates a contract (bad token, bad alignment, ...).
    #[error("data error: {0}")]
    Data(String),

    /// The optimizer was fed something it cannot use.
    #[error("optimizer error: {0}")]
    Optim(String),

    /// An API was called in a way that can never be valid.
    #[error("usage error: {0}")]
    Usage(String),

    /// Training produced a non-finite quantity.
    #[error("numeric error: {0}")]
    NonFinite(String),

    /// Synthetic data generation cannot satisfy its own invariants.
    #[error("generation error: {0}")]
    Generation(String),

    /// An on-disk artifact is inconsistent with its declaration.
    #[error("integrity error: {0}")]
    Integrity(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error in {path}: {detail}")]
    Parse { path: String, detail: String },
}

impl Error {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn parse(path: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            detail: detail.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
