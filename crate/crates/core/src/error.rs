use std::path::PathBuf;

use ssgan_tensor::TensorError;
use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] TensorError),

    /// A network or experiment specification violates its invariants.
    #[error("invalid spec: {0}")]
    Spec(String),

    /// Input extents do not fit the network or operation.
    #[error("extent error: {0}")]
    Extent(String),

    /// A file does not follow its binary or text format.
    #[error("{path}: format error at byte {offset}: {reason}")]
    Format {
        path: PathBuf,
        offset: usize,
        reason: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// Dataset contents or layout are unusable.
    #[error("data error: {0}")]
    Data(String),

    /// Caller broke an operation's precondition.
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("configuration error: {0}")]
    Config(String),

    /// Training produced a NaN or infinity.
    #[error("non-finite {component} at step {step}")]
    NonFinite { step: u64, component: String },

    #[error("gradient check failed: {0}")]
    GradCheck(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, offset: usize, reason: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            offset,
            reason: reason.into(),
        }
    }

    /// Process exit code for the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Spec(_) | Error::Contract(_) => 1,
            Error::Format { .. } | Error::Io { .. } | Error::Data(_) | Error::Extent(_) => 2,
            Error::NonFinite { .. } | Error::GradCheck(_) => 3,
            Error::Tensor(TensorError::NonFiniteGradient { .. }) => 3,
            Error::Tensor(_) => 2,
        }
    }
}
