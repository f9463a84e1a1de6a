use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: parse error at byte {offset}: {reason}")]
    PgmParse {
        path: PathBuf,
        offset: usize,
        reason: String,
    },

    #[error("{path}: parse error on line {line}: {reason}")]
    BoxParse { path: PathBuf, line: usize, reason: String },

    #[error("{path}: parse error on line {line}: {reason}")]
    ConfigParse { path: PathBuf, line: usize, reason: String },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("autodiff usage error: {0}")]
    Usage(String),

    #[error("{path}: invalid weights file: {reason}")]
    Weights { path: PathBuf, reason: String },

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) trait IoContext<T> {
    fn io_context(self, context: impl FnOnce() -> String) -> Result<T>;
}

impl<T> IoContext<T> for std::io::Result<T> {
    fn io_context(self, context: impl FnOnce() -> String) -> Result<T> {
        self.map_err(|source| Error::Io {
            context: context(),
            source,
        })
    }
}
