use thiserror::Error;

/// Errors raised across the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("quadrature did not reach tolerance {tol:e} (estimate {estimate:e}, {evaluations} evaluations)")]
    QuadratureBudget { tol: f64, estimate: f64, evaluations: usize },
    #[error("non-finite sample at ({0}, {1})")]
    NonFinite(f64, f64),
    #[error("field belongs to a different manifold")]
    ManifoldMismatch,
    #[error("near-singular operator: eigenvalue {eigenvalue:e}")]
    NearSingular { eigenvalue: f64 },
    #[error("factorization failed: {0}")]
    Factorization(String),
    #[error("iteration did not converge: {0}")]
    NoConvergence(String),
    #[error("constraint set rank-deficient (condition number {0:e})")]
    RankDeficient(f64),
    #[error("green's function needed by this profile variant")]
    GreenMissing,
    #[error("scale {delta} too large for cutoff radius {r0}")]
    ScaleTooLarge { delta: f64, r0: f64 },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("format: {0}")]
    Format(String),
}

pub type Result<T> = std::result::Result<T, Error>;
