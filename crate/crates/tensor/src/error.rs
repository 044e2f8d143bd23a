use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("{op}: shape mismatch: {detail}")]
    Shape { op: &'static str, detail: String },
    #[error("{op}: invalid argument: {detail}")]
    Invalid { op: &'static str, detail: String },
    #[error("{op}: non-finite value")]
    NonFinite { op: &'static str },
    #[error("backward needs a scalar loss, got shape {0:?}")]
    NotScalar(Vec<usize>),
    #[error("graph node {node} depends on node {input}, which is not earlier in the tape")]
    Cycle { node: usize, input: usize },
    #[error("unknown graph node {0}")]
    UnknownNode(usize),
}

pub type Result<T, E = TensorError> = std::result::Result<T, E>;
