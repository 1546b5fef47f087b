use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("degenerate rationale embedding: axis has zero norm")]
    DegenerateAxis,

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("string not present in embedding table: {0:?}")]
    MissingEmbedding(String),

    #[error("inconsistent dimension for entry {key:?}: expected {expected}, got {actual}")]
    InconsistentDimension {
        key: String,
        expected: usize,
        actual: usize,
    },

    #[error("duplicate key {0:?}")]
    DuplicateKey(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("pair {index} has no rationale but the loss requires one")]
    MissingRationale { index: usize },

    #[error("training diverged at epoch {epoch}, batch {batch}: loss is {value}")]
    Diverged { epoch: usize, batch: usize, value: f64 },

    #[error("{path}:{line}: {message}")]
    Format {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("unknown {kind} {name:?}; expected one of {valid}")]
    Unknown {
        kind: &'static str,
        name: String,
        valid: String,
    },

    #[error("io error on {path}: {source}")]
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
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    /// True for failures caused by numerics rather than by inputs.
    pub fn is_numeric(&self) -> bool {
        matches!(self, Error::Diverged { .. } | Error::NonFinite(_))
    }
}
