use thiserror::Error;

use crate::model::TokenId;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    Input(String),

    #[error("unknown token id {id} (vocabulary size {size})")]
    UnknownToken { id: TokenId, size: usize },

    #[error("context outside the model's table: {0}")]
    OutOfTable(String),

    #[error("resource limit exceeded: {0}")]
    Resource(String),

    #[error("malformed file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// Coarse classification used by the CLI to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Input,
    Resource,
    Internal,
}

impl Error {
    pub fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }

    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Input(_)
            | Error::UnknownToken { .. }
            | Error::OutOfTable(_)
            | Error::Format(_)
            | Error::Json(_)
            | Error::Csv(_) => ErrorKind::Input,
            Error::Resource(_) => ErrorKind::Resource,
            Error::Io(_) => ErrorKind::Internal,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
