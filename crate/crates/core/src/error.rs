use std::path::PathBuf;

use crate::types::{Category, View};

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("failed to parse {path}: {message}")]
    Parse { path: PathBuf, message: String },

    #[error("invalid {record}: {message}")]
    Validation { record: String, message: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("no confidence threshold configured for category `{0}`")]
    UnknownCategory(Category),

    #[error("backend failure on view {view}: {message}")]
    Backend { view: View, message: String },

    #[error("wire protocol error: {0}")]
    Protocol(String),

    #[error("checkpoint error in {path}: {message}")]
    Checkpoint { path: PathBuf, message: String },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn validation(record: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Validation {
            record: record.into(),
            message: message.into(),
        }
    }

    /// Process exit code used by the command line tool: 3 for data errors, 4 for backend errors.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Backend { .. } | Error::Protocol(_) => 4,
            _ => 3,
        }
    }
}
