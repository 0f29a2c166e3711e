use thiserror::Error;

/// Errors surfaced by grid construction, operators, solvers and estimators.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("non-finite value at node {node}: {context}")]
    NonFinite { node: usize, context: String },

    #[error("fractional order out of range: {0}")]
    InvalidOrder(String),

    #[error("insufficient regularity: {0}")]
    InsufficientRegularity(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("derivative of the integrated function is required for this Hurst regime")]
    MissingDerivative,

    #[error("path has no generating Wiener increments (use the Volterra sampler)")]
    MissingWienerPath,

    #[error("covariance factorization failed: {0}")]
    FactorizationFailed(String),

    #[error("solver produced a non-finite state at node {node} (t = {t})")]
    SolverBlowUp { node: usize, t: f64 },

    #[error("Hurst regime not supported here: {0}")]
    HurstRegime(String),

    #[error("cutoff function violates its boundary conditions: {0}")]
    InvalidCutoff(String),

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("quadrature did not converge: {0}")]
    QuadratureFailure(String),
}

pub type Result<T> = std::result::Result<T, Error>;
