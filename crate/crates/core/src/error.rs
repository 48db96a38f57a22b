use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A file or key does not follow its declared schema.
    #[error("schema error: {0}")]
    Schema(String),

    /// An embedding table could not be ingested; names the offending row and column.
    #[error("ingestion error in {path} at row {row}, column {column}: {reason}")]
    Ingestion {
        path: String,
        row: usize,
        column: usize,
        reason: String,
    },

    #[error("molecule ids not present in embedding table: {}", .0.join(", "))]
    Lookup(Vec<String>),

    #[error("join error: {0}")]
    Join(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    Dimension { expected: usize, found: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Training target contains a single class.
    #[error("degenerate target: {0}")]
    DegenerateTarget(String),

    /// A statistic is undefined for the given input (constant vector, zero norm, one class).
    #[error("undefined: {0}")]
    Undefined(String),

    #[error("hyperparameter selection failed: {0}")]
    Selection(String),

    #[error("optimizer did not converge: {0}")]
    Convergence(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn schema(msg: impl Into<String>) -> Self {
        Error::Schema(msg.into())
    }
}
