//! Error type shared across the crate.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A caller-supplied parameter is outside its documented domain.
    #[error("invalid parameter `{name}`: {reason}")]
    Parameter { name: &'static str, reason: String },

    /// Input data violates a structural invariant (empty pool, non-finite
    /// score, malformed tensor, ...).
    #[error("invalid input: {0}")]
    Input(String),

    /// A file failed to parse; `line` is 1-based.
    #[error("parse error at line {line}: {reason}")]
    Parse { line: u64, reason: String },

    /// Data parsed but does not match the declared schema.
    #[error("schema error: {0}")]
    Schema(String),

    /// Training produced a non-finite loss.
    #[error("training diverged at epoch {epoch}: {reason}")]
    Training { epoch: usize, reason: String },

    /// Correlation is undefined (zero rank variance).
    #[error("undefined correlation: {0}")]
    UndefinedCorrelation(String),

    /// A trial inside a multi-trial experiment failed.
    #[error("trial {trial} failed: {source}")]
    Trial {
        trial: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn parameter(name: &'static str, reason: impl Into<String>) -> Self {
        Error::Parameter { name, reason: reason.into() }
    }

    pub fn input(reason: impl Into<String>) -> Self {
        Error::Input(reason.into())
    }

    pub fn schema(reason: impl Into<String>) -> Self {
        Error::Schema(reason.into())
    }
}
