use std::path::Path;

use thiserror::Error;

use crate::backend::BackendError;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("unknown topic `{0}`")]
    UnknownTopic(String),

    #[error("class index {index} out of range for topic `{topic}` ({size} narratives)")]
    IndexOutOfRange {
        topic: String,
        index: usize,
        size: usize,
    },

    #[error("invalid taxonomy: {0}")]
    Taxonomy(String),

    #[error(transparent)]
    Backend(#[from] BackendError),

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("label mismatch: {0}")]
    LabelMismatch(String),

    #[error("degenerate calibration: {0}")]
    DegenerateCalibration(String),

    #[error("non-finite value during training: {0}")]
    NonFinite(String),

    #[error("duplicate id `{0}`")]
    DuplicateId(String),

    #[error("config: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        Error::Io {
            path: path.display().to_string(),
            source,
        }
    }

    pub(crate) fn parse(path: &Path, line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.display().to_string(),
            line,
            message: message.into(),
        }
    }
}
