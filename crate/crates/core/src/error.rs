use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Errors raised anywhere in the toolkit.
///
/// Variants are grouped so the command-line front end can map them onto its
/// exit-code contract: usage problems, malformed or invalid data, and numeric
/// failures.
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("sample {sample_id}: {message}")]
    Invalid { sample_id: String, message: String },

    #[error("feature dimension mismatch: expected {expected}, found {found} ({context})")]
    DimensionMismatch {
        expected: usize,
        found: usize,
        context: String,
    },

    #[error("bad magic bytes in {what}: expected {expected:?}, found {found:?}")]
    BadMagic {
        what: &'static str,
        expected: [u8; 4],
        found: [u8; 4],
    },

    #[error("geometry: {0}")]
    Geometry(String),

    #[error("rules: {0}")]
    Rules(String),

    #[error("template: unbound placeholder <{0}>")]
    UnboundPlaceholder(String),

    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    Shape {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("config: {0}")]
    Config(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("{0}")]
    Usage(String),
}

/// Coarse classification used by the command-line exit-code contract.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Usage,
    Data,
    Numeric,
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn invalid(sample_id: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Invalid {
            sample_id: sample_id.into(),
            message: message.into(),
        }
    }

    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Usage(_) | Error::Config(_) => ErrorKind::Usage,
            Error::NonFinite(_) | Error::Shape { .. } => ErrorKind::Numeric,
            _ => ErrorKind::Data,
        }
    }
}
