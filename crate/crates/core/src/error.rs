use thiserror::Error;

use crate::qp::QpError;

/// Errors raised by the models, flat maps and controllers.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// R33 fell below the chart guard; pitch/roll are no longer recoverable.
    #[error("singular attitude: R33 = {r33:e} is below the chart guard")]
    SingularAttitude { r33: f64 },

    /// The specific-force vector vanished (free fall).
    #[error("zero thrust vector: |t| = {norm:e}")]
    ZeroThrust { norm: f64 },

    #[error("window has {actual} samples, expected exactly {expected}")]
    WindowLength { expected: usize, actual: usize },

    #[error("invalid step size {0}")]
    InvalidStep(f64),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid path: {0}")]
    InvalidPath(String),

    #[error("controller history is not yet full")]
    HistoryIncomplete,

    #[error(transparent)]
    Qp(#[from] QpError),
}

pub type Result<T> = std::result::Result<T, Error>;
