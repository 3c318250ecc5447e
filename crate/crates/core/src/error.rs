use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected length {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("matrix is not symmetric: max |a_ij - a_ji| = {defect:e} exceeds {tolerance:e}")]
    NotSymmetric { defect: f64, tolerance: f64 },

    #[error("matrix is not positive semi-definite: eigenvalue {eigenvalue:e} below {threshold:e}")]
    NotPositiveSemidefinite { eigenvalue: f64, threshold: f64 },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("Schatten degree p = {0} is not a positive integer; use the Chebyshev estimator for real p")]
    NonIntegerDegree(f64),

    #[error("invalid spectral interval [{a}, {b}]: {reason}")]
    InvalidInterval { a: f64, b: f64, reason: &'static str },

    #[error("negative or non-finite accumulated mean {0:e}; the spectral interval does not enclose the spectrum")]
    SpectrumViolation(f64),

    #[error("negative inner mean {0:e}; operator is not positive semi-definite")]
    NegativeMean(f64),

    #[error("operator not certified SPD: smallest Ritz value {0:e}")]
    NotCertifiedSpd(f64),

    #[error("conjugate gradients did not converge in {iterations} iterations (relative residual {residual:e})")]
    CgNotConverged { iterations: usize, residual: f64 },

    #[error("observation time {time} is not a multiple of the time step {dt}")]
    MisalignedObservation { time: f64, dt: f64 },

    #[error("empty sample")]
    EmptySample,

    #[error(transparent)]
    MatrixMarket(#[from] MatrixMarketError),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed experiment plan: {0}")]
    Plan(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }

    /// Whether the failure is a caller mistake (bad flags, bad input files)
    /// rather than a numerical or validation failure of the problem itself.
    pub fn is_usage(&self) -> bool {
        matches!(
            self,
            Error::InvalidParameter { .. }
                | Error::NonIntegerDegree(_)
                | Error::InvalidInterval { .. }
                | Error::MisalignedObservation { .. }
                | Error::MatrixMarket(_)
                | Error::Io { .. }
                | Error::Plan(_)
                | Error::Json(_)
        )
    }
}

#[derive(Debug, Error)]
pub enum MatrixMarketError {
    #[error("line {line}: malformed header: {reason}")]
    Header { line: usize, reason: String },

    #[error("unsupported field type `{0}` (only `real` and `integer` are accepted)")]
    FieldType(String),

    #[error("unsupported format `{0}` (only `coordinate` is accepted)")]
    Format(String),

    #[error("unsupported symmetry `{0}`")]
    Symmetry(String),

    #[error("line {line}: malformed entry: {reason}")]
    Entry { line: usize, reason: String },

    #[error("line {line}: index ({row}, {col}) out of range for {nrows}x{ncols} matrix")]
    IndexOutOfRange {
        line: usize,
        row: usize,
        col: usize,
        nrows: usize,
        ncols: usize,
    },

    #[error("matrix is {nrows}x{ncols}, expected square")]
    NotSquare { nrows: usize, ncols: usize },

    #[error("expected {expected} entries, found {found}")]
    EntryCount { expected: usize, found: usize },

    #[error("general matrix is not symmetric: entry ({row}, {col}) differs from its transpose by {defect:e}")]
    Asymmetric { row: usize, col: usize, defect: f64 },
}
