use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A configuration value is out of range or inconsistent. `field` is a
    /// dotted path into the offending config.
    #[error("invalid configuration `{field}`: {reason}")]
    Config { field: String, reason: String },

    /// An operation was called with arguments that break its preconditions.
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("numerical failure at step {step}: {reason}")]
    Numerical { step: usize, reason: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("corrupt data for record `{id}`: {reason}")]
    Corruption { id: String, reason: String },

    #[error("unsupported schema version {found} (expected {expected})")]
    SchemaVersion { found: u32, expected: u32 },

    #[error("malformed {what}: {reason}")]
    Parse { what: String, reason: String },
}

impl Error {
    pub fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub fn numerical(step: usize, reason: impl Into<String>) -> Self {
        Error::Numerical {
            step,
            reason: reason.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn parse(what: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Parse {
            what: what.into(),
            reason: reason.into(),
        }
    }

    /// Process exit status used by the command-line harness.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config { .. } | Error::Contract(_) | Error::Parse { .. } => 2,
            Error::Io { .. } | Error::Corruption { .. } | Error::SchemaVersion { .. } => 3,
            Error::Numerical { .. } => 4,
        }
    }
}
