use nalgebra::DMatrix;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("operator is not positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("degenerate basis: {0}")]
    DegenerateBasis(String),

    #[error("degenerate iterate at t={t}: normalization scalar {gamma:e} underflowed")]
    DegenerateIterate { t: usize, gamma: f64 },

    #[error("dimension {dim} exceeds dense capacity {cap}")]
    Capacity { dim: usize, cap: usize },

    #[error("configuration error: {0}")]
    Config(String),

    #[error(
        "least-squares solver stopped after {iterations} iterations with ratio {achieved_ratio:e} > target {target:e}"
    )]
    NonConvergence { iterations: usize, achieved_ratio: f64, target: f64, best: Box<DMatrix<f64>> },

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for failures caused by bad input or configuration, as opposed to
    /// numerical breakdowns during a run.
    pub fn is_config(&self) -> bool {
        matches!(self, Error::Config(_) | Error::Parse(_) | Error::DimensionMismatch(_) | Error::Capacity { .. })
    }
}

pub(crate) fn check_dims(what: &str, expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::DimensionMismatch(format!("{what}: expected {expected}, got {got}")));
    }
    Ok(())
}
