use thiserror::Error;

/// Errors raised by the editing library.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch for `{operand}`: expected {expected}, found {found}")]
    Dimension {
        operand: &'static str,
        expected: String,
        found: String,
    },
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("construction failed: {0}")]
    Construction(String),
    #[error("layer selection failed: {0}")]
    Selection(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl Error {
    pub(crate) fn dims(
        operand: &'static str,
        expected: impl Into<String>,
        found: impl Into<String>,
    ) -> Self {
        Error::Dimension {
            operand,
            expected: expected.into(),
            found: found.into(),
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
