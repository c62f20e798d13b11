use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error("format error: {0}")]
    Format(String),

    #[error("corrupt data: {0}")]
    Corrupt(String),

    #[error("non-finite value at row {row}, col {col}")]
    NonFinite { row: usize, col: usize },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("training aborted at step {step}: {reason}")]
    TrainingAborted { step: usize, reason: String },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn dims(what: &str, left: (usize, usize), right: (usize, usize)) -> Self {
        Error::Dimension(format!(
            "{what}: {}x{} vs {}x{}",
            left.0, left.1, right.0, right.1
        ))
    }
}
