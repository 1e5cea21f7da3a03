use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("non-finite gradient in tensor {tensor} at element {index} (value {value})")]
    NonFiniteGradient { tensor: usize, index: usize, value: f64 },

    #[error("invalid argument: {0}")]
    Invalid(String),

    #[error("checkpoint format: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
