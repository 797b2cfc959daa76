use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("all outcome points are identical; the kernel bandwidth is undefined")]
    AllPointsIdentical,

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("a treatment arm is empty on one side of the split")]
    EmptyTreatmentArm,

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("missing column `{0}`")]
    MissingColumn(String),

    #[error("cannot parse value {value:?} at row {row}, column `{column}`")]
    Parse {
        row: usize,
        column: String,
        value: String,
    },

    #[error("treatment value {value:?} at row {row} is not 0 or 1")]
    NonBinaryTreatment { row: usize, value: String },

    #[error("model schema `{found}` is not supported (expected `{expected}`)")]
    SchemaVersionMismatch { found: String, expected: String },

    #[error("corrupt model file: {0}")]
    CorruptModel(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
