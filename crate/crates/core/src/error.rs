use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("missing column `{0}`")]
    MissingColumn(String),

    #[error("invalid schema: {0}")]
    Schema(String),

    /// `row` is 1-based and counts data rows (the header is not a row).
    #[error("row {row}: {message}")]
    Validation { row: usize, message: String },

    #[error("dataset needs at least {required} records, got {actual}")]
    TooFewRecords { required: usize, actual: usize },

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("invalid kernel: {0}")]
    InvalidKernel(String),

    #[error("degenerate bandwidth: all points are identical")]
    DegenerateBandwidth,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("no kernel support at query (zero total weight)")]
    NoSupport,

    #[error("empty null distribution")]
    EmptyNull,

    #[error("calibration set contains a single class")]
    SingleClass,

    #[error(
        "fit did not converge after {iterations} iterations (gradient norm {gradient_norm:e})"
    )]
    NotConverged {
        iterations: usize,
        gradient_norm: f64,
    },

    #[error("recalibrator is not fitted")]
    NotFitted,

    #[error("zero total weight")]
    ZeroWeight,

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
