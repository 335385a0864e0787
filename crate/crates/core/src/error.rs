use std::path::PathBuf;

use thiserror::Error;

use crate::providers::ProviderError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid value: {0}")]
    Invalid(String),

    #[error("session {session_id}: {message}{}", turn_suffix(*.turn_index))]
    Session {
        session_id: String,
        turn_index: Option<u32>,
        message: String,
    },

    #[error("unknown norm category {0:?}")]
    UnknownCategory(String),

    #[error("unknown norm status {0:?}")]
    UnknownStatus(String),

    #[error("embedding dimension mismatch: expected {expected}, found {found}")]
    Dimension { expected: usize, found: usize },

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("no parseable JSON object in model response")]
    NoJsonObject,

    #[error("model output rejected after {attempts} attempts: {last_reason}")]
    RetriesExhausted {
        attempts: usize,
        last_reason: String,
        raw_responses: Vec<String>,
    },

    #[error(transparent)]
    Provider(#[from] ProviderError),

    #[error("attribute extraction failed for {target}: {source}")]
    Extraction {
        target: String,
        #[source]
        source: Box<Error>,
    },

    #[error("{}{}: {message}", path.display(), line_suffix(*.line))]
    Input {
        path: PathBuf,
        line: Option<usize>,
        message: String,
    },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("config field `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("prediction/gold key mismatch: {0}")]
    KeyMismatch(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

fn turn_suffix(turn: Option<u32>) -> String {
    turn.map(|t| format!(" (turn_index {t})")).unwrap_or_default()
}

fn line_suffix(line: Option<usize>) -> String {
    line.map(|l| format!(":{l}")).unwrap_or_default()
}

impl Error {
    pub(crate) fn session(session_id: &str, turn_index: Option<u32>, message: impl Into<String>) -> Self {
        Error::Session {
            session_id: session_id.to_string(),
            turn_index,
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn input(path: impl Into<PathBuf>, line: Option<usize>, message: impl Into<String>) -> Self {
        Error::Input {
            path: path.into(),
            line,
            message: message.into(),
        }
    }
}
