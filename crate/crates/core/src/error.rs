use std::io;
use std::path::Path;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    Invalid(String),

    #[error("grids are not aligned")]
    Misaligned,

    #[error("empty stratum")]
    EmptyStratum,

    #[error("bad magic")]
    BadMagic,

    #[error("truncated payload")]
    Truncated,

    #[error("unsupported dtype code {0}")]
    UnsupportedDtype(u8),

    #[error("unsupported format version {0}")]
    UnsupportedVersion(u16),

    #[error("malformed {what}: {detail}")]
    Malformed { what: &'static str, detail: String },

    #[error("backward called before any forward pass was recorded")]
    EmptyTape,

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }

    pub(crate) fn malformed(what: &'static str, detail: impl Into<String>) -> Self {
        Error::Malformed {
            what,
            detail: detail.into(),
        }
    }

    /// Wraps an I/O error with the path it concerns.
    pub(crate) fn at(path: &Path) -> impl FnOnce(io::Error) -> Error + '_ {
        move |e| Error::Io(io::Error::new(e.kind(), format!("{}: {e}", path.display())))
    }

    /// True for failures of the storage layer (missing files, corrupt
    /// payloads) as opposed to bad arguments.
    pub fn is_io(&self) -> bool {
        matches!(
            self,
            Error::Io(_)
                | Error::BadMagic
                | Error::Truncated
                | Error::UnsupportedDtype(_)
                | Error::UnsupportedVersion(_)
                | Error::Malformed { .. }
        )
    }
}
