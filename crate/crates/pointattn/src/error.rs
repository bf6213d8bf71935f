use std::path::{Path, PathBuf};

/// Errors of the command-line layer, each mapped to a process exit code.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Bad flags, configuration keys or values.
    #[error("{0}")]
    Usage(String),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    /// A file that exists but cannot be decoded.
    #[error("{}: {msg}", path.display())]
    Format { path: PathBuf, msg: String },
    #[error("verification failed: {0}")]
    Verify(String),
    #[error("training diverged: {0}")]
    Diverged(String),
    #[error(transparent)]
    Core(#[from] pointattn_core::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub const EXIT_OK: i32 = 0;
pub const EXIT_VERIFY: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_IO: i32 = 3;
pub const EXIT_DIVERGED: i32 = 4;

impl Error {
    pub fn exit_code(&self) -> i32 {
        use pointattn_core::Error as C;
        match self {
            Error::Usage(_) => EXIT_USAGE,
            Error::Io { .. } | Error::Format { .. } => EXIT_IO,
            Error::Verify(_) => EXIT_VERIFY,
            Error::Diverged(_) => EXIT_DIVERGED,
            Error::Core(C::Argument(_) | C::Config(_) | C::Dimension { .. }) => EXIT_USAGE,
            Error::Core(C::NonFinite(_)) => EXIT_DIVERGED,
            Error::Core(C::Contract(_)) => EXIT_VERIFY,
        }
    }

    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        Error::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub(crate) fn format(path: &Path, msg: impl Into<String>) -> Self {
        Error::Format {
            path: path.to_path_buf(),
            msg: msg.into(),
        }
    }
}

macro_rules! usage {
    ($($arg:tt)*) => {
        $crate::error::Error::Usage(format!($($arg)*))
    };
}
pub(crate) use usage;
