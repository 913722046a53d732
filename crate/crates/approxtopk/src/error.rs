use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("format error at byte {offset}: {message}")]
    Format { offset: u64, message: String },
    #[error(transparent)]
    Core(#[from] approxtopk_core::Error),
    #[error("invalid argument: {0}")]
    Invalid(String),
    #[error("score matrix needs {needed} bytes, above the {limit}-byte memory guard")]
    MemoryGuard { needed: u64, limit: u64 },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(offset: u64, message: impl Into<String>) -> Self {
        Error::Format {
            offset,
            message: message.into(),
        }
    }

    /// Process exit status for the CLI: 2 for malformed input files, 3 for
    /// invalid arguments, 1 for anything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Format { .. } => 2,
            Error::Core(_) | Error::Invalid(_) | Error::MemoryGuard { .. } => 3,
            Error::Io { .. } | Error::Csv(_) => 1,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
