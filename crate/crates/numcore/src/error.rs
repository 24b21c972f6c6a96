use thiserror::Error;

/// Errors raised by array construction, signal primitives and the tape.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum NumError {
    #[error("shape {shape:?} holds {expected} elements but {actual} were supplied")]
    ShapeData {
        shape: Vec<usize>,
        expected: usize,
        actual: usize,
    },

    #[error("shape mismatch: {left:?} vs {right:?}")]
    ShapeMismatch { left: Vec<usize>, right: Vec<usize> },

    #[error("kernel of length {kernel} is longer than signal of length {signal}")]
    KernelTooLong { kernel: usize, signal: usize },

    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),

    #[error("expected a scalar output, got shape {0:?}")]
    NonScalar(Vec<usize>),

    #[error("invalid argument: {0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, NumError>;
