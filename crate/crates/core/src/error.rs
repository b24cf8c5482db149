use thiserror::Error;

pub type Result<T, E = GomError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum GomError {
    #[error("{what} index {index} out of range (length {len})")]
    IndexOutOfRange {
        what: &'static str,
        index: usize,
        len: usize,
    },

    #[error("{what}: expected length {expected}, got {got}")]
    LengthMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("enumerating {k}^{j} latent classifications exceeds the limit of {limit}")]
    EnumerationTooLarge { k: usize, j: usize, limit: u64 },

    #[error("item {item}{} has zero marginal frequency", label.as_ref().map(|l| format!(" ({l})")).unwrap_or_default())]
    ZeroMarginal { item: usize, label: Option<String> },

    #[error("need at least {needed} draws, have {have}")]
    InsufficientDraws { needed: usize, have: usize },

    #[error("degenerate trace: {0}")]
    DegenerateTrace(String),

    #[error("membership means were not accumulated for this chain; rerun with `accumulate_g_mean` enabled")]
    MissingMembershipMeans,

    #[error("non-finite log-likelihood at sweep {sweep}; state: {dump}")]
    NonFiniteLogLikelihood { sweep: usize, dump: String },

    #[error("lower bound decreased from {from} to {to} at iteration {iteration}")]
    BoundDecrease { iteration: usize, from: f64, to: f64 },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("line {line}: {message}")]
    Data { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl GomError {
    /// True for failures that come from the numerics rather than from inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            GomError::NonFiniteLogLikelihood { .. }
                | GomError::BoundDecrease { .. }
                | GomError::Numerical(_)
                | GomError::DegenerateTrace(_)
        )
    }

    /// True for malformed or unreadable input data.
    pub fn is_data(&self) -> bool {
        matches!(
            self,
            GomError::Data { .. }
                | GomError::Io(_)
                | GomError::Csv(_)
                | GomError::Json(_)
                | GomError::ZeroMarginal { .. }
                | GomError::LengthMismatch { .. }
        )
    }
}
