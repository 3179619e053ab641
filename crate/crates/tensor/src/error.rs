use thiserror::Error;

pub type Result<T, E = TensorError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TensorError {
    /// Extents disagree on a named axis.
    #[error("{op}: shape mismatch on axis {axis}: expected {expected}, got {actual}")]
    Shape {
        op: &'static str,
        axis: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("{op}: invalid configuration: {reason}")]
    Config { op: &'static str, reason: String },

    #[error("batch_norm: channel {channel} has only {population} value(s); train mode needs at least 2")]
    DegenerateStatistics { channel: usize, population: usize },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("non-finite gradient for parameter `{name}`")]
    NonFiniteGradient { name: String },

    #[error("invalid range: lo ({lo}) must be below hi ({hi})")]
    Range { lo: f64, hi: f64 },

    #[error("gradient oracle invalid: {0}")]
    OracleInvalid(String),
}

impl TensorError {
    pub(crate) fn shape(op: &'static str, axis: &'static str, expected: usize, actual: usize) -> Self {
        TensorError::Shape {
            op,
            axis,
            expected,
            actual,
        }
    }

    pub(crate) fn config(op: &'static str, reason: impl Into<String>) -> Self {
        TensorError::Config {
            op,
            reason: reason.into(),
        }
    }
}
