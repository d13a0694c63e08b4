use thiserror::Error;

/// Errors produced by the solvers, the I/O layer and the configuration parser.
#[derive(Debug, Error)]
pub enum MfgError {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("grid mismatch: expected N_h = {expected}, found {found}")]
    GridMismatch { expected: usize, found: usize },

    #[error("time mesh mismatch: {0}")]
    MeshMismatch(String),

    #[error("grid with N_h = {fine} is not a refinement of N_h = {coarse}")]
    NonNestedGrids { fine: usize, coarse: usize },

    #[error("not a discrete density: {0}")]
    NotADensity(String),

    #[error("Newton iteration did not converge after {iterations} iterations (residual {final_residual:.3e})")]
    NonConvergence {
        iterations: usize,
        final_residual: f64,
    },

    #[error("outer fixed-point iteration did not converge after {iters} iterations (last change {last_change:.3e})")]
    OuterNonConvergence { iters: usize, last_change: f64 },

    #[error("inverse power iteration stalled after {iterations} iterations")]
    InversePowerStall { iterations: usize },

    #[error("linear solve failed: {0}")]
    LinearSolve(String),

    #[error("negative density value {value:.3e} at node {node} exceeds the clamp threshold")]
    NegativeDensity { node: usize, value: f64 },

    #[error("configuration error in `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, MfgError>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> MfgError {
    MfgError::InvalidParameter {
        name,
        reason: reason.into(),
    }
}
