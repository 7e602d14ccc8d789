//! Error type shared across the engine.

/// Errors raised by tensor math, layers, models, and the data pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A tensor dimension is zero or the element count overflows.
    #[error("dimension error: {0}")]
    Dim(String),

    /// Operand shapes are incompatible.
    #[error("shape error: {0}")]
    Shape(String),

    /// An argument is outside its documented domain.
    #[error("argument error: {0}")]
    Arg(String),

    /// An operation was called in the wrong order (e.g. backward before forward).
    #[error("state error: {0}")]
    State(String),

    /// Input data violates a contract (bad labels, mismatched planes, ...).
    #[error("data error: {0}")]
    Data(String),

    /// A serialized file is malformed. `offset` is the byte position of the problem.
    #[error("format error at byte {offset}: {msg}")]
    Format { offset: u64, msg: String },

    /// A non-finite value appeared where the math requires finite ones.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// Batch statistics cannot be computed (too few samples).
    #[error("statistics error: {0}")]
    Stats(String),

    /// A checkpoint does not match the requested architecture or is corrupt.
    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    /// Underlying I/O failure.
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    /// Metrics are undefined (e.g. empty confusion matrix).
    #[error("undefined metrics: {0}")]
    UndefinedMetrics(String),
}

pub type Result<T> = std::result::Result<T, Error>;
