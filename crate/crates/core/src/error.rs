use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("failed to decode image {path}: {message}")]
    Decode { path: PathBuf, message: String },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("no face found in {0}")]
    NoFace(String),

    #[error("question {0} was already answered")]
    Replay(String),

    #[error("unknown drawing id(s): {0:?}")]
    UnknownDrawing(Vec<String>),

    #[error("pool exhausted: {0}")]
    Exhausted(String),

    #[error("non-finite value in loss term `{term}`")]
    NonFinite { term: String },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("checkpoint schema version {found} is not supported (expected {expected}); re-export the model with a matching release")]
    SchemaVersion { found: String, expected: String },

    #[error("answer {index}: {source}")]
    AtAnswer {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("tensor error: {0}")]
    Tensor(#[from] candle_core::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by bad input or configuration rather than by a
    /// failure while running.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Parse { .. }
                | Error::Validation(_)
                | Error::Config(_)
                | Error::Shape(_)
                | Error::UnknownDrawing(_)
                | Error::Replay(_)
                | Error::SchemaVersion { .. }
        ) || matches!(self, Error::AtAnswer { source, .. } if source.is_validation())
    }
}
