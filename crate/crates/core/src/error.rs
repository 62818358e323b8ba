use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid noise parameter: beta[{index}] = {value} must be strictly positive")]
    InvalidNoise { index: usize, value: f64 },

    #[error("infeasible sparsity: {active} active entries cannot cover {rows} rows")]
    InfeasibleSparsity { active: usize, rows: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("dataset is already shifted")]
    AlreadyShifted,

    #[error("dataset must be mean-shifted for this operation")]
    NotShifted,

    #[error("site {site}: A = {value} is not strictly positive")]
    NonPositiveA { site: usize, value: f64 },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("degenerate model: {0}")]
    DegenerateModel(String),

    #[error("correlation undefined: zero-variance input")]
    ZeroVariance,

    #[error("matrix is singular (pivot {pivot:e} at column {column})")]
    SingularMatrix { column: usize, pivot: f64 },

    #[error("no active transmission couplings left to decimate")]
    EmptyT,

    #[error("optimizer failure at decimation step {step}: {reason}")]
    OptimizerFailure { step: usize, reason: String },

    #[error("parse error in {path}: {msg}")]
    Parse { path: String, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn dims(msg: impl Into<String>) -> Self {
        Error::DimensionMismatch(msg.into())
    }

    /// Errors that stem from numerics rather than from user input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NonPositiveA { .. }
                | Error::Domain(_)
                | Error::DegenerateModel(_)
                | Error::SingularMatrix { .. }
                | Error::OptimizerFailure { .. }
                | Error::ZeroVariance
        )
    }
}
