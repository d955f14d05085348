//! Error type shared across the toolkit.

use thiserror::Error;

/// Everything that can go wrong in the library.
///
/// Variants are grouped by their CLI exit code: data errors (malformed
/// inputs, shape violations) map to exit code 3, numeric failures map to
/// exit code 4. See [`Error::exit_code`].
#[derive(Debug, Error)]
pub enum Error {
    #[error("rank {rank} out of range; must satisfy 1 <= rank <= {max}")]
    RankOutOfRange { rank: usize, max: usize },

    #[error("non-finite value at row {row}, column {col}")]
    NonFiniteInput { row: usize, col: usize },

    #[error("rank deficient input: column {col} is numerically dependent on the others")]
    RankDeficient { col: usize },

    #[error("dimension mismatch in {context}: {left:?} vs {right:?}")]
    DimensionMismatch {
        context: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },

    #[error("matrix has no observed entries")]
    EmptyObservationSet,

    #[error("row or column {index} of the {axis} axis has no observed entries")]
    EmptyRowOrColumn { axis: &'static str, index: usize },

    #[error("{observed} observed entries are too few for {folds} folds")]
    TooFewObservations { observed: usize, folds: usize },

    #[error("holdout index set is empty")]
    EmptyHoldout,

    #[error("holdout index ({row}, {col}) is not an observed entry")]
    HoldoutNotObserved { row: usize, col: usize },

    #[error("rank selection retained no singular values above the threshold")]
    RankZeroSelected,

    #[error("correlation {rho} outside [0, 1)")]
    InvalidCorrelation { rho: f64 },

    #[error("noise variance {sigma_sq} must be positive")]
    InvalidVariance { sigma_sq: f64 },

    #[error("basis is not orthonormal: column {col} has norm {norm}")]
    NotOrthonormal { col: usize, norm: f64 },

    #[error("index {index} out of range for dimension {len}")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("parse error at line {line}, column {col}: {message}")]
    ParseError {
        line: usize,
        col: usize,
        message: String,
    },

    #[error("ragged rows: line {line} has {found} fields, expected {expected}")]
    RaggedRows {
        line: usize,
        expected: usize,
        found: usize,
    },

    #[error("matrix has observed entries nowhere (all values missing)")]
    AllMissing,

    #[error("matrix is empty")]
    EmptyMatrix,

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("singular value decomposition failed to converge")]
    SvdFailed,

    #[error("simulation repetition {rep} failed: {source}")]
    ScenarioRep {
        rep: usize,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    /// CLI exit code for this error: 3 for data errors, 4 for numeric failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::RankDeficient { .. }
            | Error::RankZeroSelected
            | Error::SvdFailed => 4,
            Error::ScenarioRep { source, .. } => source.exit_code(),
            _ => 3,
        }
    }

    /// Stable machine-readable tag for the error kind.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::RankOutOfRange { .. } => "RankOutOfRange",
            Error::NonFiniteInput { .. } => "NonFiniteInput",
            Error::RankDeficient { .. } => "RankDeficient",
            Error::DimensionMismatch { .. } => "DimensionMismatch",
            Error::EmptyObservationSet => "EmptyObservationSet",
            Error::EmptyRowOrColumn { .. } => "EmptyRowOrColumn",
            Error::TooFewObservations { .. } => "TooFewObservations",
            Error::EmptyHoldout => "EmptyHoldout",
            Error::HoldoutNotObserved { .. } => "HoldoutNotObserved",
            Error::RankZeroSelected => "RankZeroSelected",
            Error::InvalidCorrelation { .. } => "InvalidCorrelation",
            Error::InvalidVariance { .. } => "InvalidVariance",
            Error::NotOrthonormal { .. } => "NotOrthonormal",
            Error::IndexOutOfRange { .. } => "IndexOutOfRange",
            Error::InvalidConfig(_) => "InvalidConfig",
            Error::ParseError { .. } => "ParseError",
            Error::RaggedRows { .. } => "RaggedRows",
            Error::AllMissing => "AllMissing",
            Error::EmptyMatrix => "EmptyMatrix",
            Error::Io { .. } => "IoError",
            Error::SvdFailed => "SvdFailed",
            Error::ScenarioRep { .. } => "ScenarioRep",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
