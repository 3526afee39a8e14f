use std::fmt;
use std::path::Path;

use clm_core::Error;

pub const EXIT_OK: u8 = 0;
pub const EXIT_NEGATIVE: u8 = 1;
pub const EXIT_USAGE: u8 = 2;
pub const EXIT_INTERNAL: u8 = 3;

#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        Self { code: EXIT_USAGE, message: message.into() }
    }

    pub fn internal(message: impl Into<String>) -> Self {
        Self { code: EXIT_INTERNAL, message: message.into() }
    }

    /// Missing or unreadable inputs are the caller's problem; anything else
    /// is internal.
    pub fn io(path: &Path, e: std::io::Error) -> Self {
        use std::io::ErrorKind::*;
        let code = match e.kind() {
            NotFound | PermissionDenied | IsADirectory | NotADirectory | InvalidInput => EXIT_USAGE,
            _ => EXIT_INTERNAL,
        };
        Self { code, message: format!("{}: {e}", path.display()) }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::Io { path, error } => Self::io(&path, error),
            Error::Rejected(_) | Error::RejectedAt { .. } | Error::MalformedSentence(_) | Error::Checkpoint(_) | Error::Json(_) => {
                Self::usage(e.to_string())
            }
            Error::ContractViolation(_) | Error::NonFiniteLoss { .. } | Error::Codec { .. } => Self::internal(e.to_string()),
        }
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        Self::usage(e.to_string())
    }
}
