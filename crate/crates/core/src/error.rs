//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    /// A line-oriented text file failed to parse. Lines are 1-based.
    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    /// A domain invariant was violated while constructing or validating data.
    #[error("{0}")]
    Validation(String),

    #[error("bad magic: expected {expected}")]
    BadMagic { expected: &'static str },

    #[error("unsupported format version {found} (expected {expected})")]
    VersionMismatch { expected: u32, found: u32 },

    #[error("truncated payload while reading {0}")]
    Truncated(&'static str),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("frame dimension mismatch: store has dim {expected}, sequence has dim {found}")]
    DimMismatch { expected: usize, found: usize },

    #[error("missing key: {0}")]
    MissingKey(String),

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("encoder produced a zero vector before normalization")]
    ZeroVector,

    #[error("ranked list is not sorted by (similarity desc, entity id asc)")]
    NotSorted,

    #[error("length mismatch: {left} references vs {right} hypotheses")]
    LengthMismatch { left: usize, right: usize },

    #[error("entity id {0} not found in pool")]
    UnknownEntity(u32),

    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    /// Wraps an error with a free-form context string (e.g. the dialog id it
    /// occurred in).
    pub fn context(self, context: impl Into<String>) -> Self {
        Error::Context {
            context: context.into(),
            source: Box::new(self),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
