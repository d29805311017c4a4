use thiserror::Error;

/// Everything that can go wrong across the simulation and solver routes.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid rate function: {0}")]
    InvalidRateFunction(String),

    #[error("invalid parameter `{field}`: {reason}")]
    InvalidParameter { field: &'static str, reason: String },

    #[error("grid mismatch: {left} cells vs {right} cells")]
    GridMismatch { left: usize, right: usize },

    #[error("all Feynman-Kac weights vanished numerically")]
    DegenerateWeights,

    #[error("no surviving samples (survival fraction {survival_fraction:e})")]
    DegenerateSample { survival_fraction: f64 },

    #[error("allowed-set mass underflowed at t = {time}; renormalize more often or shorten the step")]
    PrecisionLoss { time: f64 },

    #[error("power iteration did not converge after {iterations} iterations (gap estimate {gap_estimate:e})")]
    ConvergenceFailure { iterations: usize, gap_estimate: f64 },

    #[error("regime hypothesis violated: {0}")]
    RegimeHypothesis(String),

    #[error("closed-form invasion probabilities require a linear group rate")]
    UnsupportedRateShape,

    #[error("truncation removed all mass at t = {time}")]
    DegenerateTruncation { time: f64 },

    #[error("distance reached the numerical floor at t = {floor_time}, before the fit window opens")]
    WindowTooLate { floor_time: f64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(field: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        field,
        reason: reason.into(),
    }
}
