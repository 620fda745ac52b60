//! Crate-wide error type and exit-code mapping.

use std::path::PathBuf;

use thiserror::Error;

/// All failure modes surfaced by the library and the CLI.
#[derive(Debug, Error)]
pub enum Error {
    /// Malformed or inconsistent configuration.
    #[error("config error: {0}")]
    Config(String),

    /// Unreadable, unparseable, or internally inconsistent input data.
    #[error("data error: {0}")]
    Data(String),

    /// Filesystem failure while reading or writing an artifact.
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// An operation was called with arguments that violate its contract.
    #[error("invalid operation: {0}")]
    Invalid(String),

    /// A pipeline stage aborted.
    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub fn in_stage(self, stage: &'static str) -> Self {
        match self {
            e @ Error::Stage { .. } => e,
            other => Error::Stage { stage, source: Box::new(other) },
        }
    }

    /// Process exit code: 2 config, 3 data, 4 stage failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Data(_) | Error::Io { .. } => 3,
            Error::Invalid(_) => 4,
            Error::Stage { source, .. } => match source.as_ref() {
                Error::Config(_) => 2,
                Error::Data(_) | Error::Io { .. } => 3,
                _ => 4,
            },
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
