use std::path::PathBuf;

use clm_codec::CodecError;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("rejected input: {0}")]
    Rejected(String),
    #[error("rejected input at offset {offset}: {message}")]
    RejectedAt { offset: usize, message: String },
    #[error("malformed sentence: {0}")]
    MalformedSentence(String),
    #[error("contract violation: {0}")]
    ContractViolation(String),
    #[error("non-finite loss {loss} at step {step} (lr {lr:e}, batch {batch:?})")]
    NonFiniteLoss { step: usize, lr: f64, loss: f64, batch: Vec<usize> },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("codec error for {source_id}: {error}")]
    Codec { source_id: String, error: CodecError },
    #[error("{path}: {error}")]
    Io { path: PathBuf, error: std::io::Error },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, error: std::io::Error) -> Self {
        Self::Io { path: path.into(), error }
    }

    pub(crate) fn rejected(msg: impl Into<String>) -> Self {
        Self::Rejected(msg.into())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
