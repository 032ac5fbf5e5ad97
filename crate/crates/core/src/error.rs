use thiserror::Error;

/// Errors produced by the operator, measure and design layers.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("invalid space: {0}")]
    InvalidSpace(String),

    #[error("singular factorization (pivot ratio {pivot_ratio:.3e})")]
    SingularFactorization { pivot_ratio: f64 },

    #[error("operator is not self-adjoint (relative defect {defect:.3e})")]
    NotSelfAdjoint { defect: f64 },

    #[error("eigensolver did not converge: {converged} of {requested} pairs after {iterations} iterations")]
    NonConvergence {
        requested: usize,
        converged: usize,
        iterations: usize,
    },

    #[error("eigenvectors are not M-orthonormal (defect {defect:.3e})")]
    NotOrthonormal { defect: f64 },

    #[error("trace not supported: {0}")]
    UnsupportedTrace(String),

    #[error("eigenvalue {value} is not admissible: {reason}")]
    InvalidEigenvalue { value: f64, reason: &'static str },

    #[error("operator is indefinite (eigenvalue {value:.3e})")]
    Indefinite { value: f64 },

    #[error("measure must be centered (mean norm {norm:.3e})")]
    NotCentered { norm: f64 },

    #[error("covariance is singular or degenerate (smallest eigenvalue {min_eigenvalue:.3e})")]
    SingularCovariance { min_eigenvalue: f64 },

    #[error("vector leaves the retained prior spectrum (relative residual {residual:.3e})")]
    CameronMartinTruncation { residual: f64 },

    #[error("design size {k} exceeds candidate count {candidates}")]
    DesignSize { k: usize, candidates: usize },

    #[error("invalid design weight {weight} at candidate {index}")]
    InvalidWeight { index: usize, weight: f64 },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

pub type Result<T> = std::result::Result<T, Error>;
