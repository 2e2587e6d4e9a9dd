use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("unknown dtype `{0}`")]
    UnknownDType(String),

    #[error("unknown GPU `{0}`")]
    UnknownGpu(String),

    #[error("invalid value for `{field}`: {reason}")]
    Invariant { field: String, reason: String },

    #[error("failed to parse {what}: {message}")]
    Parse { what: String, message: String },

    #[error("integer overflow while computing {0}")]
    Overflow(&'static str),

    #[error("GPU `{gpu}` has no peak matmul rate for dtype `{dtype}`")]
    MissingPeakRate { gpu: String, dtype: String },

    #[error("{0} not integral")]
    NotIntegral(String),

    #[error("unknown rule `{0}`")]
    UnknownRule(String),

    #[error("measurement file schema violation at row {row}: {message}")]
    Schema { row: u64, message: String },

    #[error("{0}")]
    InvalidInput(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn invariant(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Invariant {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
