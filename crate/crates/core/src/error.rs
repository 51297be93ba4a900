use thiserror::Error;

/// Errors surfaced by the replay, device, and trainer layers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("corrupt row: {0}")]
    CorruptRow(String),

    #[error("row index {index} out of range for buffer with {len} rows")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("allocation of {requested} bytes exceeds device memory limit ({available} bytes available)")]
    Allocation { requested: u64, available: u64 },

    #[error("replay not ready: {size} experiences visible, burn-in threshold is {min}")]
    NotReady { size: usize, min: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("non-finite value produced by {location}")]
    NonFinite { location: &'static str },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
