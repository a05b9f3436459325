use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch between {lhs:?} and {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("contract violated: {0}")]
    Contract(String),

    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("line {line}: invalid tag sequence: {msg}")]
    Tag { line: usize, msg: String },

    #[error("input error at batch row {row}, position {pos}: token id {id} >= vocab size {vocab}")]
    TokenOutOfRange {
        row: usize,
        pos: usize,
        id: usize,
        vocab: usize,
    },

    #[error("format error: {0}")]
    Format(String),

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
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
