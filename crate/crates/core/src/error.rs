use thiserror::Error;

/// Errors produced across the lab.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("index {index} out of range for {what} (len {len})")]
    Index { what: &'static str, index: usize, len: usize },

    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Shape { op: &'static str, lhs: Vec<usize>, rhs: Vec<usize> },

    #[error("channel carries no signal (zero vector)")]
    NoSignal,

    #[error("generation failed: {0}")]
    Generation(String),

    #[error("sequence {id}: {source}")]
    Sequence {
        id: u64,
        #[source]
        source: Box<Error>,
    },

    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },

    #[error("unsupported format version {found} (supported: {supported})")]
    BadVersion { found: u32, supported: u32 },

    #[error("truncated input: {0}")]
    Truncated(String),

    #[error("inconsistent data: {0}")]
    Inconsistent(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
