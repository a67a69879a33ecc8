use std::path::PathBuf;

use thiserror::Error;

use crate::scorer::Capability;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    #[error("duplicate note id `{0}`")]
    DuplicateNote(String),

    #[error("empty name pool")]
    EmptyNamePool,

    #[error("unknown patient `{0}`")]
    UnknownPatient(String),

    #[error("annotations reference unknown conditions: {}", .0.join(", "))]
    UnknownConditions(Vec<String>),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("metric undefined: {0}")]
    UndefinedMetric(&'static str),

    #[error("scorer does not advertise capability {0:?}")]
    MissingCapability(Capability),

    #[error("scorer unavailable: {0}")]
    ScorerUnavailable(String),

    #[error("protocol error: {0}")]
    Protocol(String),

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
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl AsRef<std::path::Path>, line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.as_ref().display().to_string(),
            line,
            message: message.into(),
        }
    }

    /// Process exit code for the CLI: 1 usage, 2 data, 3 scorer unavailable.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 1,
            Error::ScorerUnavailable(_) | Error::Protocol(_) => 3,
            _ => 2,
        }
    }
}
