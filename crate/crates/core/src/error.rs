use thiserror::Error;

/// Errors raised by the numerical routines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("point is not a singularity: |X(sigma)| = {residual:e} > {tol:e}")]
    NotASingularity { residual: f64, tol: f64 },

    #[error("eigen-solver did not converge")]
    EigenFailure,

    #[error("integration step failure at t = {t}: {reason}")]
    StepFailure { t: f64, reason: String },

    #[error("degenerate vector (norm {norm:e})")]
    DegenerateVector { norm: f64 },

    #[error("vector field vanishes at the point (|X| = {norm:e}); normal space undefined")]
    SingularPoint { norm: f64 },

    #[error("no section crossing found in [{from}, {to}]")]
    NoCrossing { from: f64, to: f64 },

    #[error("orbit left the tubular domain (deviation {deviation:e} > {bound:e})")]
    LeftDomain { deviation: f64, bound: f64 },

    #[error("bad parameters: {0}")]
    BadParameters(String),

    #[error("no Pliss point: {0}")]
    NoPlissPoint(String),

    #[error("no admissible offset: {0}")]
    NoneFound(String),

    #[error("Newton iteration did not converge after {iterations} iterations (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("singular Jacobian (condition ratio {ratio:e}); return map is not hyperbolic")]
    SingularJacobian { ratio: f64 },

    #[error("no one-dimensional dominating direction: {0}")]
    NoDominatedF(String),

    #[error("resonance at Taylor order {order}: coefficient equation is singular")]
    ResonanceObstruction { order: usize },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("zero vector")]
    ZeroVector,

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("unknown model `{0}`")]
    UnknownModel(String),
}

pub type Result<T> = std::result::Result<T, Error>;
