use std::path::PathBuf;

use thiserror::Error;

/// Crate-wide error type. Each variant maps to a stable class name via
/// [`Error::class`], which the CLI prints as a machine-parsable prefix.
#[derive(Debug, Error)]
pub enum Error {
    #[error("column '{0}' not found in header")]
    MissingColumn(String),

    #[error("non-numeric cell '{value}' at data row {row}, column '{column}'")]
    NonNumericCell {
        row: usize,
        column: String,
        value: String,
    },

    #[error("dataset has no rows")]
    EmptyDataset,

    #[error("reserved output column '{0}' present in input")]
    ReservedColumn(String),

    #[error("malformed CSV {path}: {msg}")]
    MalformedCsv { path: String, msg: String },

    #[error("arity mismatch: expected {expected}, got {got}")]
    ArityMismatch { expected: usize, got: usize },

    #[error("split fractions must each lie in (0,1) and sum to 1, got ({0}, {1}, {2})")]
    BadFractions(f64, f64, f64),

    #[error("fractions must be ascending and lie in (0,1]")]
    BadQuantileFractions,

    #[error("reference set is empty")]
    EmptyReference,

    #[error("knn_residual requires residuals (predictions on the training set)")]
    MissingResiduals,

    #[error("target_strangeness requires predicted targets")]
    MissingPredictions,

    #[error("sigma must be strictly positive, got {0}")]
    NonPositiveSigma(f64),

    #[error("insufficient calibration data in bin {bin}: needed {needed}, got {got}")]
    InsufficientCalibration {
        bin: usize,
        needed: usize,
        got: usize,
    },

    #[error("Mondrian model requires a bin id at prediction time")]
    MissingBin,

    #[error("bin {bin} out of range for model with {bins} bins")]
    BinOutOfRange { bin: usize, bins: usize },

    #[error("model format version {got} unsupported (expected {expected})")]
    VersionMismatch { expected: u32, got: u32 },

    #[error("corrupt model file: {0}")]
    CorruptModel(String),

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("empty input")]
    EmptyInput,

    #[error("empty sweep results")]
    EmptyResults,

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

impl Error {
    /// Stable class name for machine-parsable error reporting.
    pub fn class(&self) -> &'static str {
        match self {
            Error::MissingColumn(_) => "MissingColumn",
            Error::NonNumericCell { .. } => "NonNumericCell",
            Error::EmptyDataset => "EmptyDataset",
            Error::ReservedColumn(_) => "ReservedColumn",
            Error::MalformedCsv { .. } => "MalformedCsv",
            Error::ArityMismatch { .. } => "ArityMismatch",
            Error::BadFractions(..) => "BadFractions",
            Error::BadQuantileFractions => "BadQuantileFractions",
            Error::EmptyReference => "EmptyReference",
            Error::MissingResiduals => "MissingResiduals",
            Error::MissingPredictions => "MissingPredictions",
            Error::NonPositiveSigma(_) => "NonPositiveSigma",
            Error::InsufficientCalibration { .. } => "InsufficientCalibration",
            Error::MissingBin => "MissingBin",
            Error::BinOutOfRange { .. } => "BinOutOfRange",
            Error::VersionMismatch { .. } => "VersionMismatch",
            Error::CorruptModel(_) => "CorruptModel",
            Error::LengthMismatch { .. } => "LengthMismatch",
            Error::EmptyInput => "EmptyInput",
            Error::EmptyResults => "EmptyResults",
            Error::Io { .. } => "IoError",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
