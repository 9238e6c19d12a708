use std::path::PathBuf;

use crate::types::YearMonth;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("length mismatch: {what} has {found} entries, expected {expected}")]
    LengthMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("archive contains no valid records for band {band}")]
    EmptyArchive { band: String },

    #[error("duplicate archive record for pixel {pixel}, band {band}, {period}")]
    DuplicateRecord {
        pixel: u64,
        band: String,
        period: YearMonth,
    },

    #[error("grid geometry mismatch: {0}")]
    GeometryMismatch(String),

    #[error("coarse grid does not overlap the fine grid")]
    NoOverlap,

    #[error("composites are not strictly sorted by (year, month): {0}")]
    UnsortedInput(String),

    #[error("pixel {pixel} has {valid} valid observations; at least 2 are needed")]
    InsufficientData { pixel: u64, valid: usize },

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("invalid configuration: {0}")]
    ConfigInvalid(String),

    #[error("malformed file {path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, message: impl ToString) -> Self {
        Error::Format {
            path: path.into(),
            message: message.to_string(),
        }
    }

    /// Short machine-readable name of the variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::LengthMismatch { .. } => "LengthMismatch",
            Error::InvalidParameter(_) => "InvalidParameter",
            Error::EmptyArchive { .. } => "EmptyArchive",
            Error::DuplicateRecord { .. } => "DuplicateRecord",
            Error::GeometryMismatch(_) => "GeometryMismatch",
            Error::NoOverlap => "NoOverlap",
            Error::UnsortedInput(_) => "UnsortedInput",
            Error::InsufficientData { .. } => "InsufficientData",
            Error::EmptyInput(_) => "EmptyInput",
            Error::ConfigInvalid(_) => "ConfigInvalid",
            Error::Format { .. } => "Format",
            Error::Io { .. } => "Io",
        }
    }

    /// True when the error stems from bad user input rather than a bug or
    /// an environment failure.
    pub fn is_input_error(&self) -> bool {
        !matches!(self, Error::Io { .. } | Error::LengthMismatch { .. })
    }
}
