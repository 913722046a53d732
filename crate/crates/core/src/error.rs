use alloc::string::String;
use core::fmt;

/// Errors raised by the search, recall-model and roofline routines.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Error {
    /// An argument violated an operation's precondition.
    InvalidArgument(String),
    /// Two inputs that must agree on a dimension did not.
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn mismatch(what: &'static str, expected: usize, found: usize) -> Self {
        Error::DimensionMismatch {
            what,
            expected,
            found,
        }
    }
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::InvalidArgument(msg) => write!(f, "invalid argument: {msg}"),
            Error::DimensionMismatch {
                what,
                expected,
                found,
            } => write!(f, "{what} mismatch: expected {expected}, found {found}"),
        }
    }
}

impl core::error::Error for Error {}

pub type Result<T, E = Error> = core::result::Result<T, E>;
