use thiserror::Error;

pub type Result<T, E = LqrError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum LqrError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// The closed-loop matrix is not Schur stable, i.e. the gain lies outside
    /// the set of stabilizing feedbacks where the cost is finite.
    #[error("matrix is not Schur stable (spectral radius {rho:.6e})")]
    NotSchurStable { rho: f64 },

    #[error("Q is not positive definite (smallest eigenvalue {min_eig:.3e})")]
    DegenerateQ { min_eig: f64 },

    #[error("no convergence after {iterations} iterations")]
    NoConvergence { iterations: usize },

    #[error("integrator step underflow at t = {t:.6e} (dt = {dt:.3e})")]
    StepUnderflow { t: f64, dt: f64 },

    /// An iterate produced by a descent rule that theory guarantees to be
    /// stabilizing failed the spectral radius check.
    #[error("iterate {iteration} lost stability (spectral radius {rho:.6e})")]
    InternalStabilityLoss { iteration: usize, rho: f64 },

    #[error("gain has {mass:.3e} mass outside the sparsity pattern")]
    PatternViolation { mass: f64 },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("matrix is singular: {0}")]
    Singular(&'static str),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl LqrError {
    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        LqrError::Dimension(msg.into())
    }
}
