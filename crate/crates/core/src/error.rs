use thiserror::Error;

/// Errors raised across the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("mode {mode:?} lies outside the band box of radius {band}")]
    OutOfBand { mode: Vec<i64>, band: i64 },

    #[error("truncation: {lost:e} of L2 mass pushed outside the band box of radius {band}")]
    Truncation { lost: f64, band: i64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid family: {0}")]
    InvalidFamily(String),

    #[error("degenerate coisotropic data: {0}")]
    Degenerate(String),

    #[error("chart domain violation: {0}")]
    ChartDomain(String),

    #[error("not enough samples for a fit: need {needed}, have {have}")]
    TooFewSamples { needed: usize, have: usize },

    #[error("tangency check failed: |drho/dt| = {defect:e} at rho_ff = {rho:e}")]
    Tangency { defect: f64, rho: f64 },

    #[error("flow left the collar rho_ff < {collar}: rho_ff = {rho}")]
    LeftCollar { rho: f64, collar: f64 },

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
