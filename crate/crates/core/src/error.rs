use thiserror::Error;

#[derive(Debug, Error)]
pub enum RqdaError {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("insufficient samples: need at least {needed}, got {got} ({context})")]
    InsufficientSamples {
        needed: usize,
        got: usize,
        context: String,
    },

    #[error("dimension mismatch: expected {expected}, got {got} ({context})")]
    DimensionMismatch {
        expected: usize,
        got: usize,
        context: String,
    },

    #[error("fixed point did not converge after {iterations} iterations (last residual {residual:e})")]
    Convergence {
        iterations: usize,
        residual: f64,
        trace: Vec<f64>,
    },

    #[error("deterministic equivalent unstable for class {class}: 1 - γ²φφ̃ = {margin:e}")]
    DivergedEquivalent { class: usize, margin: f64 },

    #[error("invalid regularizer: {0}")]
    InvalidRegularizer(String),

    #[error("degenerate estimate: {0}")]
    DegenerateEstimate(String),

    #[error("degenerate bias design: {0}")]
    DegenerateDesign(String),

    #[error("tuning failed, every candidate was rejected: {}", .failures.iter().map(|(g, e)| format!("γ₀={g}: {e}")).collect::<Vec<_>>().join("; "))]
    TuningFailed { failures: Vec<(f64, String)> },

    #[error("parse error at row {row}, column {col}: {msg}")]
    Parse { row: usize, col: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl RqdaError {
    /// True for failures of the numerics (as opposed to bad input or I/O).
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            RqdaError::NotPositiveDefinite(_)
                | RqdaError::Convergence { .. }
                | RqdaError::DivergedEquivalent { .. }
                | RqdaError::InvalidRegularizer(_)
                | RqdaError::DegenerateEstimate(_)
                | RqdaError::DegenerateDesign(_)
                | RqdaError::TuningFailed { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, RqdaError>;
