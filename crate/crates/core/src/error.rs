//! Crate-wide error type.

use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Invalid configuration (bad field values, cross-field violations).
    #[error("config error: {0}")]
    Config(String),

    /// Malformed config or data file; carries the offending line number.
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    /// Operation precondition violated (empty input, bad count, ...).
    #[error("invalid argument: {0}")]
    Argument(String),

    /// Tensor/vector dimension mismatch.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// Index out of range.
    #[error("index out of range: {0}")]
    Index(String),

    /// Metric has no defined value on the given data.
    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
