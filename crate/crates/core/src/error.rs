use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("matrix contains a non-finite entry at ({row}, {col})")]
    NonFinite { row: usize, col: usize },

    #[error("k = {k} out of range (must satisfy 1 <= k <= {max})")]
    KOutOfRange { k: usize, max: usize },

    #[error("degenerate local scale: {0}")]
    DegenerateScale(String),

    #[error("empty gold set for query {0:?}")]
    EmptyGold(String),

    #[error("no gold assignment for query {0:?}")]
    MissingGold(String),

    #[error("gold target {target:?} for query {query:?} is not in the ranked vocabulary")]
    UnknownGoldTarget { query: String, target: String },

    #[error("degenerate split: {0}")]
    DegenerateSplit(String),

    #[error("unknown method spec {0:?} (expected ridge-xy or ridge-yx, optionally suffixed +nicdm)")]
    UnknownMethod(String),

    #[error("lexicon produced no resolvable pairs ({skipped} entries skipped)")]
    EmptyPairing { skipped: usize },

    #[error("duplicate identifier {0:?}")]
    DuplicateId(String),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
