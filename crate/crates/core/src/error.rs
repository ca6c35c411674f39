use alloc::string::String;

/// Errors raised by the numerical routines.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("shape mismatch: {left_n}x{left_d} vs {right_n}x{right_d}")]
    ShapeMismatch {
        left_n: usize,
        left_d: usize,
        right_n: usize,
        right_d: usize,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite value at index {index}")]
    NonFinite { index: usize },

    #[error("matrix is not orthogonal (max deviation {deviation:e})")]
    NotOrthogonal { deviation: f64 },

    #[error("singular direction Gram matrix: smallest eigenvalue {min_eigenvalue:e} <= {floor:e}")]
    Singular { min_eigenvalue: f64, floor: f64 },

    #[error("support has coincident rows; the fixed-point map is undefined there")]
    CoincidentRows,

    #[error("instance too large: {size} exceeds limit {limit}")]
    TooLarge { size: u128, limit: u128 },

    #[error("weights are not a probability vector: {0}")]
    InvalidWeights(String),

    #[error("transport solver did not terminate within {iterations} pivots")]
    PivotLimit { iterations: usize },

    #[error("iterate diverged at step {iteration} (norm {norm:e}, step size {step})")]
    Diverged {
        iteration: usize,
        norm: f64,
        step: f64,
    },
}

pub type Result<T> = core::result::Result<T, Error>;
