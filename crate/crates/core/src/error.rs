use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },

    #[error("non-finite value produced by {op}")]
    NonFiniteValue { op: &'static str },

    #[error("backward requires a scalar loss, got {numel} elements")]
    NotScalarLoss { numel: usize },

    #[error("backward already ran on this graph")]
    GraphConsumed,

    #[error("node count mismatch: adjacency has {expected} nodes, input has {got}")]
    NodeCountMismatch { expected: usize, got: usize },

    #[error("label_len {label_len} exceeds seq_len {seq_len}")]
    LabelLongerThanInput { label_len: usize, seq_len: usize },

    #[error("invalid config `{key}`: {reason}")]
    InvalidConfig { key: &'static str, reason: String },

    #[error("missing value at row {row}, column {col}")]
    MissingValue { row: usize, col: usize },

    #[error("timestamps not strictly increasing and evenly spaced at row {row}")]
    NonMonotonicTimestamp { row: usize },

    #[error("column {col} is constant over the training split")]
    ConstantColumn { col: usize },

    #[error("series too short: need {needed} rows, have {got}")]
    SeriesTooShort { needed: usize, got: usize },

    #[error("invalid split fractions: {0}")]
    InvalidSplit(String),

    #[error("invalid coupling: {0}")]
    InvalidCoupling(String),

    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },

    #[error("config mismatch: {0}")]
    ConfigMismatch(String),

    #[error("empty dataset: {0}")]
    EmptyDataset(&'static str),

    #[error("unknown parameter `{0}`")]
    UnknownParameter(String),
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::ShapeMismatch { op, detail: detail.into() }
    }
}
