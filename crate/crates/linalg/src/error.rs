use thiserror::Error;

/// Failures of the sparse kernels and the eigensolver.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("pattern mismatch: {0}")]
    PatternMismatch(String),
    #[error("factorization is singular at pivot {pivot} (|d| = {magnitude:.3e})")]
    FactorizationSingular { pivot: usize, magnitude: f64 },
    #[error("matrix is not positive definite at pivot {pivot}")]
    NotPositiveDefinite { pivot: usize },
    #[error("eigensolver did not converge after {iterations} block steps ({converged} of {wanted} pairs converged)")]
    NoConvergence {
        iterations: usize,
        converged: usize,
        wanted: usize,
    },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}
