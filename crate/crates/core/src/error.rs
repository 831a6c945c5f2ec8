use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("io error: {0}")]
    Io(#[from] io::Error),

    #[error("malformed header: {0}")]
    MalformedHeader(String),

    #[error("payload length mismatch: expected {expected} bytes, found {actual}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("non-finite value at element {index}")]
    NonFinite { index: usize },

    #[error("unsupported format version {found} (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },

    #[error("invariant violation: {0}")]
    InvariantViolation(String),

    #[error("duplicate sample_id `{0}`")]
    DuplicateSampleId(String),

    #[error("manifest entry {entry}: missing required field `{field}`")]
    MissingField { entry: usize, field: String },

    #[error("manifest entry {entry}: unknown field `{field}`")]
    UnknownField { entry: usize, field: String },

    #[error("manifest entry {entry}: unknown population `{value}`")]
    UnknownPopulation { entry: usize, value: String },

    #[error("parse error: {0}")]
    Parse(String),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        if e.is_io() {
            Error::Io(e.into())
        } else {
            Error::Parse(e.to_string())
        }
    }
}
