use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("domain is not admissible: {0}")]
    NotAdmissible(String),
    #[error("grazing incidence: phi = {phi:e} outside (phi_min, pi - phi_min)")]
    Grazing { phi: f64 },
    #[error("no convergence in {what} after {iterations} iterations (residual {residual:e})")]
    NoConvergence { what: String, iterations: usize, residual: f64 },
    #[error("requested jet order {requested} exceeds the configured maximum {max}")]
    OrderTooLarge { requested: usize, max: usize },
    #[error("singular system in {what} (indicator {value:e})")]
    Singular { what: String, value: f64 },
    #[error("bump support collides with a protected point at s = {s}")]
    SupportCollision { s: f64 },
    #[error("patched profile loses positivity (min radius of curvature {min_rho:e})")]
    Positivity { min_rho: f64 },
    #[error("jet base points do not match ({left} vs {right})")]
    BaseMismatch { left: f64, right: f64 },
    #[error("orbit condition violated: {0}")]
    Condition(String),
    #[error("orbit is not hyperbolic (trace {trace})")]
    NotHyperbolic { trace: f64 },
    #[error("budget exhausted: {0}")]
    Budget(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn singular(what: impl Into<String>, value: f64) -> Self {
        Error::Singular { what: what.into(), value }
    }

    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}
