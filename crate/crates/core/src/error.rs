use thiserror::Error;

use crate::spn::ValidityReport;

#[derive(Debug, Error)]
pub enum SpnError {
    #[error("network is not a valid SPN: {0}")]
    InvalidSpn(ValidityReport),
    #[error("expected {expected} feature values, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("evaluation trace does not belong to this network")]
    TraceMismatch,
    #[error("zero-density evidence at datum {index}")]
    DegenerateEvidence { index: usize },
    #[error("leaf received zero total responsibility")]
    ZeroResponsibility,
    #[error("all rows are identical; no positive nearest-neighbour distance")]
    DegenerateData,
    #[error("need at least {needed} rows, got {got}")]
    TooFewRows { needed: usize, got: usize },
    #[error("{0} soft-label rows for {1} unlabelled data")]
    SoftLabelShape(usize, usize),
    #[error("label vectors differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("model format error on line {line}: {msg}")]
    Format { line: usize, msg: String },
    #[error("invalid configuration: {0}")]
    Config(String),
}

#[derive(Debug, Error)]
pub enum DataError {
    #[error("parse error at row {row}, column {column}: {msg}")]
    ParseError { row: usize, column: String, msg: String },
    #[error("missing value at row {row}, column {column}")]
    MissingValue { row: usize, column: String },
    #[error("label column `{0}` not found")]
    NoLabelColumn(String),
    #[error("every feature has zero variance on the fit rows")]
    AllFeaturesDegenerate,
    #[error("class {class} has too few rows for the requested split")]
    InsufficientRows { class: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = SpnError> = std::result::Result<T, E>;
