use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Coarse error classes, used by the CLI to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Input,
    Domain,
    Transport,
}

#[derive(Debug, Error)]
pub enum Error {
    /// A numeric argument or structure is outside its mathematical domain.
    #[error("domain error: {0}")]
    Domain(String),

    /// An aggregate was requested over an empty set.
    #[error("empty support: {0}")]
    EmptySupport(String),

    #[error("unknown group `{0}`")]
    UnknownGroup(String),

    #[error("invalid input: {0}")]
    Input(String),

    #[error("i/o error on {}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Store(#[from] StoreError),

    #[error(transparent)]
    Transport(#[from] TransportError),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Domain(_) | Error::EmptySupport(_) | Error::UnknownGroup(_) => {
                ErrorClass::Domain
            }
            Error::Input(_) | Error::Io { .. } | Error::Store(_) => ErrorClass::Input,
            Error::Transport(_) => ErrorClass::Transport,
        }
    }
}

/// Failures reading a persisted evidence bank.
#[derive(Debug, Error)]
pub enum StoreError {
    #[error("bank schema version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },

    #[error("checksum mismatch for {file}: manifest has {expected}, file hashes to {actual}")]
    Checksum {
        file: String,
        expected: String,
        actual: String,
    },

    #[error("malformed bank file {file}: {reason}")]
    Malformed { file: String, reason: String },
}

/// Failures talking to a remote encoder or LLM endpoint.
#[derive(Debug, Error)]
pub enum TransportError {
    #[error("endpoint returned HTTP {status}: {body}")]
    Status { status: u16, body: String },

    #[error("request failed: {0}")]
    Request(String),

    #[error("could not decode endpoint response: {0}")]
    Decode(String),

    #[error("gave up after {attempts} attempts: {last}")]
    Exhausted { attempts: u32, last: String },

    #[error("capability not available: {0}")]
    Unsupported(String),
}
