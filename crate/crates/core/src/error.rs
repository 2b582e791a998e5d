use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// An input file could not be opened or read.
    #[error("cannot read {path}: {source}")]
    Open {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    /// A record in a line-delimited file failed to parse or validate.
    #[error("{path}:{line}: {message}")]
    Record {
        path: PathBuf,
        line: usize,
        message: String,
    },

    /// Input data violates a domain invariant.
    #[error("invalid input: {0}")]
    Input(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },

    #[error("empty vote on {subject_id}/{question_id}: no ensemble member answered")]
    EmptyVote {
        subject_id: String,
        question_id: String,
    },

    #[error("no cluster in subject {0} has a surviving member")]
    NoRepresentative(String),

    #[error("request to {endpoint} failed: {message}")]
    Http { endpoint: String, message: String },

    #[error("cannot write {path}: {source}")]
    Write {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for errors caused by bad user input (files, flags, configs)
    /// rather than failures while running.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            Error::Open { .. } | Error::Record { .. } | Error::Input(_) | Error::Config(_)
        )
    }

    pub(crate) fn record(path: &std::path::Path, line: usize, message: impl Into<String>) -> Self {
        Error::Record {
            path: path.to_path_buf(),
            line,
            message: message.into(),
        }
    }
}
