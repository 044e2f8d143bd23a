use std::path::PathBuf;

use pscan_tensor::TensorError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("{kind} calibration failed: achieved coverage {achieved:.5} for nominal {nominal:.5}")]
    Calibration { kind: &'static str, achieved: f64, nominal: f64 },
    #[error("data error: {0}")]
    Data(String),
    #[error("{path}: {detail}")]
    Format { path: PathBuf, detail: String },
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

impl Error {
    /// True for failures caused by non-finite values during training or inference.
    pub fn is_numeric(&self) -> bool {
        matches!(self, Error::Numeric(_) | Error::Tensor(TensorError::NonFinite { .. }))
    }

    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
