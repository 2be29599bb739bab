use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("invalid phrase: {0}")]
    InvalidPhrase(String),

    #[error("no negated relation pairs found with prefix {0:?}")]
    NoNegatedRelations(String),

    #[error("cannot corrupt {slot} slot: {reason}")]
    CorruptionImpossible { slot: &'static str, reason: String },

    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },

    #[error("duplicate phrase in index: {0}")]
    DuplicatePhrase(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("statistics error: {0}")]
    Statistics(String),

    #[error("ranked negative source exhausted: {shortfall} training positives left without a negative")]
    SourceExhausted { shortfall: usize },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
