use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: parse error: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("{path}: line {line}: {message}")]
    Record {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("template {id:?}: {message}")]
    InvalidTemplate { id: String, message: String },
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("training data: {0}")]
    Training(String),
    #[error("length mismatch: {0} gold labels vs {1} predictions")]
    LengthMismatch(usize, usize),
    #[error("empty input: {0}")]
    Empty(String),
    #[error("serialization: {0}")]
    Serialize(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
