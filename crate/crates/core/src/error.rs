//! Error type shared across the crate.

use std::path::PathBuf;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

/// All recoverable failure modes surfaced by this crate.
///
/// Programmer errors (out-of-bounds indexing through infallible accessors)
/// panic instead; everything reachable from user input or data files is a
/// variant here.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Matrix or vector dimensions do not line up.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// An index supplied through a fallible interface is out of range.
    #[error("index out of bounds: {0}")]
    Bounds(String),

    /// Invalid configuration or hyperparameter value.
    #[error("invalid configuration: {0}")]
    Config(String),

    /// Malformed or inconsistent input data.
    #[error("invalid data: {0}")]
    Data(String),

    /// A CSV or JSON payload failed to parse.
    #[error("parse error in {path}: {message}")]
    Parse { path: PathBuf, message: String },

    /// Filesystem failure wrapping the underlying cause.
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// Attempt to resample or modify a clamped entry.
    #[error("clamped entry: {0}")]
    Clamp(String),

    /// Operation requires state that is absent (empty trace, missing layer).
    #[error("invalid state: {0}")]
    State(String),

    /// A metric is undefined for the given inputs.
    #[error("undefined metric: {0}")]
    Metric(String),

    /// An identifier was not found in a dictionary.
    #[error("unknown identifier: {0}")]
    Lookup(String),

    /// Numerical failure (non-finite value where a finite one is required).
    #[error("numerical error: {0}")]
    Numeric(String),

    /// A serialized artifact has an unsupported version tag.
    #[error("unsupported artifact version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },
}

impl Error {
    /// Wraps an I/O failure with the path it occurred on.
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Builds a parse error tagged with the offending file.
    pub fn parse(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            message: message.into(),
        }
    }
}
