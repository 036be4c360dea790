use thiserror::Error;

pub type Result<T> = std::result::Result<T, PermexpError>;

#[derive(Debug, Error)]
pub enum PermexpError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid permutation: {0}")]
    InvalidPermutation(String),

    #[error("pair indices must differ (got i = j = {0})")]
    SameIndex(usize),

    #[error("index {index} out of range for n = {n}")]
    IndexOutOfRange { index: usize, n: usize },

    #[error("invalid statistic: {0}")]
    InvalidStatistic(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("pseudo-likelihood is degenerate: pair differences span a proper subspace")]
    Degenerate,

    #[error("no sign change of the pseudo-likelihood score on [-2^30, 2^30]")]
    NoBracket,

    #[error("estimated A-hat is singular (condition number {condition:.3e})")]
    SingularAHat { condition: f64 },

    #[error("matrix is singular or not positive definite: {0}")]
    SingularMatrix(String),

    #[error("Sinkhorn did not converge in {iterations} iterations (marginal error {marginal_error:.3e})")]
    MaxItersExceeded {
        iterations: usize,
        marginal_error: f64,
    },

    #[error("statistic is not centered; call center_components first")]
    NotCentered,

    #[error("observed statistic lies on the boundary of its convex hull; the MLE diverges")]
    Boundary,

    #[error("exact enumeration supports n <= {max}, got n = {n}")]
    NTooLarge { n: usize, max: usize },

    #[error("hit-and-run eligible set empty at rank {rank}")]
    EligibleSetEmpty { rank: usize },

    #[error("solver failed: {0}")]
    SolverFailed(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl PermexpError {
    /// True for failures of a numerical routine, as opposed to bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            PermexpError::Degenerate
                | PermexpError::NoBracket
                | PermexpError::SingularAHat { .. }
                | PermexpError::SingularMatrix(_)
                | PermexpError::MaxItersExceeded { .. }
                | PermexpError::Boundary
                | PermexpError::EligibleSetEmpty { .. }
                | PermexpError::SolverFailed(_)
        )
    }
}
