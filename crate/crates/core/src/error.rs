use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },

    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),

    #[error("backward called without a cached forward pass")]
    MissingCache,

    #[error("parameter layout mismatch")]
    LayoutMismatch,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("infeasible partition: {0}")]
    InfeasiblePartition(String),

    #[error("shard is empty")]
    EmptyShard,

    #[error("teacher logits are required by the calibrated objective")]
    MissingTeacher,

    #[error("idx format: {0}")]
    Idx(String),

    #[error("checkpoint format: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub(crate) fn shape_err(op: &'static str, detail: impl Into<String>) -> Error {
    Error::ShapeMismatch {
        op,
        detail: detail.into(),
    }
}
