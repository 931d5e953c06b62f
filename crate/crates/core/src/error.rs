use thiserror::Error;

/// Errors produced anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("coordinate mismatch: expected {expected:?}-space vector, found {found:?}-space")]
    SpaceMismatch {
        expected: crate::prior::Space,
        found: crate::prior::Space,
    },

    #[error("matrix is not positive definite: eigenvalue/pivot {index} = {value:e}")]
    NotPositiveDefinite { index: usize, value: f64 },

    #[error("matrix is not symmetric: max asymmetry {asymmetry:e} exceeds {tolerance:e}")]
    NotSymmetric { asymmetry: f64, tolerance: f64 },

    #[error("forward solver failure: {0}")]
    Solver(String),

    #[error("eigensolver did not converge after {iterations} iterations (max residual {residual:e})")]
    EigenNonConvergence { iterations: usize, residual: f64 },

    #[error("expected GNH rank {rank} exceeds the cap {cap}; increase the storage threshold")]
    RankExplosion { rank: usize, cap: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("malformed file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_dim(expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, found })
    }
}
