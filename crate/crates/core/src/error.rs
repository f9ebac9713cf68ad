use thiserror::Error;

use crate::numerics::NumericsError;

#[derive(Debug, Error)]
pub enum Error {
    #[error("config error: {0}")]
    Config(String),
    #[error("format error: {0}")]
    Format(#[from] FormatError),
    #[error("numerical error: {0}")]
    Numerics(#[from] NumericsError),
    #[error("label error: {0}")]
    Label(String),
    #[error("invalid action: {0}")]
    InvalidAction(String),
    #[error("training diverged: {0}")]
    Diverged(String),
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Failures while decoding one of the binary artifact files.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum FormatError {
    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },
    #[error("unsupported version {found} (expected {expected})")]
    VersionMismatch { found: u16, expected: u16 },
    #[error("file truncated: needed {needed} bytes at offset {offset}")]
    Truncated { offset: usize, needed: usize },
    #[error("checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    Checksum { stored: u32, computed: u32 },
    #[error("malformed content: {0}")]
    Malformed(String),
}

impl Error {
    /// Process exit code used by the command-line tool.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Label(_) | Error::InvalidAction(_) => 2,
            Error::Format(_) | Error::Io(_) | Error::Empty(_) => 3,
            Error::Numerics(NumericsError::Dimension { .. }) => 2,
            Error::Numerics(_) | Error::Diverged(_) => 4,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
