use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error("empty file")]
    EmptyFile,

    #[error("malformed row {row}: {reason}")]
    MalformedRow { row: usize, reason: String },

    #[error("unknown stance string {0:?}")]
    UnknownStance(String),

    #[error("label scheme mismatch: expected {expected}, found {found}")]
    SchemeMismatch { expected: String, found: String },

    #[error("duplicate id {0}")]
    DuplicateId(u64),

    #[error("bad magic header")]
    BadMagic,

    #[error("truncated payload: {0}")]
    Truncated(String),

    #[error("non-finite value at id {0}")]
    NonFinite(u64),

    #[error("missing embedding for id {0}")]
    MissingEmbedding(u64),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },

    #[error("zero-norm vector")]
    ZeroNorm,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite {0}")]
    Diverged(String),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
