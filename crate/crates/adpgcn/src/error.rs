use std::path::PathBuf;

use adpgcn_core::Error as CoreError;

pub type Result<T, E = AppError> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum AppError {
    #[error(transparent)]
    Core(#[from] CoreError),

    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },

    #[error("{path}: {source}")]
    Csv { path: PathBuf, source: csv::Error },

    #[error("{path}: row {row}, column `{column}`: cannot parse {value:?}")]
    Parse { path: PathBuf, row: usize, column: String, value: String },

    #[error("{path}: {reason}")]
    BadFile { path: PathBuf, reason: String },

    #[error("checkpoint format version {found} is not supported (expected {expected})")]
    FormatVersionMismatch { found: u32, expected: u32 },

    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),

    #[error("invalid config `{key}`: {reason}")]
    Config { key: String, reason: String },

    #[error("adjacency row {row} sums to {sum}, not 1")]
    AdjacencyNotStochastic { row: usize, sum: f64 },
}

impl AppError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        AppError::Io { path: path.into(), source }
    }

    pub fn config(key: impl Into<String>, reason: impl Into<String>) -> Self {
        AppError::Config { key: key.into(), reason: reason.into() }
    }

    /// 2 for configuration problems, 3 for data and IO problems, 4 for
    /// numeric failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            AppError::Config { .. } => 2,
            AppError::Io { .. }
            | AppError::Csv { .. }
            | AppError::Parse { .. }
            | AppError::BadFile { .. }
            | AppError::FormatVersionMismatch { .. }
            | AppError::CorruptCheckpoint(_) => 3,
            AppError::AdjacencyNotStochastic { .. } => 4,
            AppError::Core(e) => match e {
                CoreError::InvalidConfig { .. }
                | CoreError::LabelLongerThanInput { .. }
                | CoreError::InvalidCoupling(_)
                | CoreError::InvalidSplit(_)
                | CoreError::ConfigMismatch(_)
                | CoreError::UnknownParameter(_)
                | CoreError::ShapeMismatch { .. }
                | CoreError::NodeCountMismatch { .. } => 2,
                CoreError::MissingValue { .. }
                | CoreError::NonMonotonicTimestamp { .. }
                | CoreError::ConstantColumn { .. }
                | CoreError::SeriesTooShort { .. }
                | CoreError::EmptyDataset(_) => 3,
                CoreError::NonFiniteValue { .. }
                | CoreError::NonFiniteLoss { .. }
                | CoreError::NotScalarLoss { .. }
                | CoreError::GraphConsumed => 4,
            },
        }
    }
}
