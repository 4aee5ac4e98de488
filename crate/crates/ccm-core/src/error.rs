use thiserror::Error;

#[derive(Debug, Error)]
pub enum CcmError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("geometry mismatch between operands")]
    GeometryMismatch,

    #[error("mass threshold violated: mass {mass:.6} >= 2*pi*(1-1e-6) in the focusing case")]
    ThresholdViolation { mass: f64 },

    #[error("symplectic form degenerate: smallest singular value {sigma_min:.3e}")]
    DegenerateForm { sigma_min: f64 },

    #[error("linear solve failed (matrix singular to working precision)")]
    SolveFailed,

    #[error("operator not Hermitian: defect {defect:.3e}")]
    NotHermitian { defect: f64 },

    #[error("trajectory became non-finite at t={t}: {what}")]
    Blowup { t: f64, what: String },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, CcmError>;
