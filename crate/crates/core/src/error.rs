use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Coarse error class, used by front ends to choose an exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    Input,
    Config,
    Contract,
}

impl ErrorCategory {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorCategory::Input => 1,
            ErrorCategory::Config => 2,
            ErrorCategory::Contract => 3,
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("row {row}: {msg}")]
    Row { row: u64, msg: String },

    #[error("input error: {0}")]
    Input(String),

    #[error("duplicate sample for meter '{meter_id}' at {timestamp}")]
    DuplicateSample { meter_id: String, timestamp: String },

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("infeasible circuit sample: {0}")]
    Infeasible(String),
}

impl Error {
    pub fn category(&self) -> ErrorCategory {
        match self {
            Error::Io { .. }
            | Error::Csv(_)
            | Error::Row { .. }
            | Error::Input(_)
            | Error::DuplicateSample { .. }
            | Error::EmptyInput(_) => ErrorCategory::Input,
            Error::Config(_) => ErrorCategory::Config,
            Error::Contract(_) | Error::Infeasible(_) => ErrorCategory::Contract,
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    /// Prefix the message with context, keeping the category.
    pub fn context(self, ctx: impl std::fmt::Display) -> Self {
        match self {
            Error::Input(m) => Error::Input(format!("{ctx}: {m}")),
            Error::Config(m) => Error::Config(format!("{ctx}: {m}")),
            Error::Contract(m) => Error::Contract(format!("{ctx}: {m}")),
            Error::Infeasible(m) => Error::Infeasible(format!("{ctx}: {m}")),
            Error::EmptyInput(m) => Error::EmptyInput(format!("{ctx}: {m}")),
            other => other,
        }
    }
}
