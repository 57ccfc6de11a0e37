use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Bad or inconsistent configuration (schema, experiment parameters).
    #[error("config error: {0}")]
    Config(String),

    /// A CSV row could not be parsed.
    #[error("parse error at {path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: u64,
        message: String,
    },

    /// A value in an otherwise well-formed table is unusable.
    #[error("data error at row {row}, attribute `{attribute}`: {message}")]
    Data {
        row: usize,
        attribute: String,
        message: String,
    },

    /// The table cannot be split into l-diverse groups.
    #[error("not eligible for l={l}: value `{value}` occurs {count} times in {n} rows (limit {limit})")]
    Eligibility {
        l: usize,
        value: String,
        count: usize,
        n: usize,
        limit: usize,
    },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("domain mismatch: {0}")]
    DomainMismatch(String),

    #[error("empty input: {0}")]
    Empty(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code used by the command line front end.
    pub fn exit_code(&self) -> u8 {
        match self {
            Error::Config(_) | Error::Unsupported(_) => 2,
            Error::Parse { .. }
            | Error::Data { .. }
            | Error::Eligibility { .. }
            | Error::DomainMismatch(_)
            | Error::Empty(_) => 3,
            Error::Io { .. } | Error::Csv(_) => 1,
        }
    }
}
