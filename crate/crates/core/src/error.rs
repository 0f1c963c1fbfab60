use std::path::PathBuf;

/// Errors produced anywhere in the detection toolkit.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error on {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// Malformed VVOL content. `offset` is the byte position where parsing failed.
    #[error("malformed volume file at byte {offset}: {message}")]
    Format { offset: u64, message: String },

    #[error("payload length mismatch at byte {offset}: expected {expected} bytes, found {found}")]
    PayloadLength {
        offset: u64,
        expected: u64,
        found: u64,
    },

    #[error("geometry mismatch: {0}")]
    GeometryMismatch(String),

    #[error("volume kind mismatch: expected {expected}, found {found}")]
    KindMismatch { expected: String, found: String },

    #[error("invariant violation: {0}")]
    Invariant(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("scorer failure: {0}")]
    Scorer(String),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
