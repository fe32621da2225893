use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid count {0}: non-empty images contain at least one animal")]
    InvalidCount(i64),

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("unknown species `{0}`")]
    Taxonomy(String),

    #[error("integrity error: {0}")]
    Integrity(String),

    #[error("cannot split dataset: {0}")]
    Split(String),

    #[error("invalid config field `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("value out of range: {0}")]
    OutOfRange(String),

    #[error("missing label field `{0}`")]
    MissingLabel(&'static str),

    #[error("numeric error in {0}")]
    Numeric(String),

    #[error("training diverged at epoch {epoch}, batch {batch}")]
    Diverged { epoch: usize, batch: usize },

    #[error("target accuracy {target} unattainable (max achievable {max_achievable:?})")]
    Unattainable { target: f64, max_achievable: Option<f64> },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
