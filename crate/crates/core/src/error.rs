use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the search engine, the harness and the CLI.
#[derive(Debug, Error)]
pub enum Error {
    /// A value lies outside the domain of the function it was passed to.
    #[error("domain error: {0}")]
    Domain(String),

    /// An operation's precondition does not hold (e.g. estimating from zero samples).
    #[error("precondition violated: {0}")]
    Precondition(String),

    /// An invalid or inconsistent configuration value.
    #[error("invalid configuration for `{key}`: {message}")]
    Config { key: String, message: String },

    /// A statistic needs a pooled or known null estimate that is not available.
    #[error("missing context: {0}")]
    MissingContext(String),

    /// Malformed input file.
    #[error("{path}:{line}: {message}")]
    Parse { path: PathBuf, line: u64, message: String },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn config(key: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            message: message.into(),
        }
    }

    pub(crate) fn domain(message: impl Into<String>) -> Self {
        Error::Domain(message.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
