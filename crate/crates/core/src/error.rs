use thiserror::Error;

/// Errors raised by the operator library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// Malformed arguments: bad extents, mismatched shapes, out-of-range indices.
    #[error("invalid argument: {0}")]
    Argument(String),

    /// Non-finite input or output of a numerical kernel.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// Configuration text that failed to parse or validate.
    #[error("config line {line}: {message}")]
    Config { line: usize, message: String },
}

impl Error {
    pub(crate) fn arg(msg: impl Into<String>) -> Self {
        Error::Argument(msg.into())
    }

    pub(crate) fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric(msg.into())
    }

    pub(crate) fn config(line: usize, msg: impl Into<String>) -> Self {
        Error::Config { line, message: msg.into() }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
