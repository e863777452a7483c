use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("target column `{0}` not found in header")]
    MissingTargetColumn(String),

    #[error("empty header name at column {0}")]
    EmptyHeader(usize),

    #[error("duplicate header name `{0}`")]
    DuplicateHeader(String),

    #[error("header `{0}` cannot be used as a feature identifier")]
    UnsupportedHeader(String),

    #[error("non-numeric cell `{value}` at row {row}, column `{column}`")]
    NonNumeric {
        row: usize,
        column: String,
        value: String,
    },

    #[error("missing value at row {row}, column `{column}` (use median imputation to fill)")]
    MissingValue { row: usize, column: String },

    #[error("target column is constant")]
    ConstantTarget,

    #[error("target column `{0}` is not numeric and cannot be used for regression")]
    NonNumericTarget(String),

    #[error("dataset needs at least {rows} rows and {cols} feature column(s)")]
    TooSmall { rows: usize, cols: usize },

    #[error("split ratio {ratio} leaves an empty partition of {rows} rows")]
    EmptySplit { ratio: f64, rows: usize },

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: usize, got: usize },

    #[error("column index {index} out of range for {len} columns")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("empty feature group")]
    EmptyCluster,

    #[error("unknown operation `{0}`")]
    UnknownOperation(String),

    #[error("invalid operation set: {0}")]
    InvalidOperationSet(String),

    #[error("lineage parse error at byte {pos}: {msg}")]
    LineageParse { pos: usize, msg: String },

    #[error("lineage references unknown column `{0}`")]
    UnknownColumn(String),

    #[error("classification target has a single class")]
    SingleClass,

    #[error("metric {metric} is not defined for {task} targets")]
    MetricTaskMismatch { metric: String, task: String },

    #[error("zero-degree node {0} in adjacency matrix")]
    ZeroDegree(usize),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("checkpoint format error: {0}")]
    Checkpoint(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures caused by the input data rather than the configuration
    /// or the numerics.
    pub fn is_data_error(&self) -> bool {
        matches!(
            self,
            Error::Io { .. }
                | Error::Csv(_)
                | Error::MissingTargetColumn(_)
                | Error::EmptyHeader(_)
                | Error::DuplicateHeader(_)
                | Error::UnsupportedHeader(_)
                | Error::NonNumeric { .. }
                | Error::MissingValue { .. }
                | Error::ConstantTarget
                | Error::NonNumericTarget(_)
                | Error::TooSmall { .. }
                | Error::EmptySplit { .. }
                | Error::SingleClass
        )
    }
}
