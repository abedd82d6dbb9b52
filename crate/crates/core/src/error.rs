use thiserror::Error;

/// Errors surfaced by grid construction, norm scans, sampling and solving.
#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("grid misalignment: {0}")]
    Alignment(String),

    #[error("covariance matrix not positive definite at leading minor {minor} (after jitter: {jittered})")]
    NotPositiveDefinite { minor: usize, jittered: bool },

    #[error("sewing did not converge: {0}")]
    SewDiverged(String),

    #[error("h is not a cocycle: max |delta h| = {0:e} on sampled 4-tuples")]
    NotCocycle(f64),

    #[error("solver failure at t = {time}: {message}")]
    Solver { time: f64, message: String },

    #[error("grid too coarse for contraction window: tau = {tau:e} < mesh = {mesh:e}")]
    WindowUnderflow { tau: f64, mesh: f64 },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub fn alignment(msg: impl Into<String>) -> Self {
        Error::Alignment(msg.into())
    }
}
