use thiserror::Error;

/// Errors raised across the selection, reward, policy and training layers.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("sample {id} has a zero-norm feature vector; cosine similarity is undefined")]
    ZeroNorm { id: String },

    #[error("index {index} out of bounds for ground set of size {size}")]
    IndexOutOfBounds { index: usize, size: usize },

    #[error("{kind} requires a query set")]
    MissingQuery { kind: &'static str },

    #[error("candidate {0} is already selected")]
    AlreadySelected(usize),

    #[error("matrix is not positive definite ({0})")]
    NotPositiveDefinite(&'static str),

    #[error("exhaustive search over {subsets} subsets exceeds the guard of {limit}; use lazy_greedy")]
    SearchTooLarge { subsets: u128, limit: u128 },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("quadrature did not converge on [{a}, {b}]")]
    Quadrature { a: f64, b: f64 },

    #[error("io error: {0}")]
    Io(String),

    #[error("parse error: {0}")]
    Parse(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
