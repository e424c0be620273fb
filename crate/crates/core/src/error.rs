use thiserror::Error;

/// Validation failures for daily panels and their CSV representation.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum PanelError {
    #[error("no rows")]
    NoRows,
    #[error("missing required column `{0}`")]
    MissingColumn(&'static str),
    #[error("row {row}: {message}")]
    Parse { row: usize, message: String },
    #[error("row {row}: negative count in column `{column}`")]
    NegativeCount { row: usize, column: &'static str },
    #[error("row {row}: dates are not contiguous (expected {expected}, found {found})")]
    NonContiguous {
        row: usize,
        expected: String,
        found: String,
    },
    #[error("occupancy negative at day {day}")]
    NegativeOccupancy { day: usize },
    #[error("series `{column}` has length {found}, expected {expected}")]
    LengthMismatch {
        column: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("column `{column}` is partially blank (row {row})")]
    PartiallyBlank { row: usize, column: &'static str },
    #[error("io: {0}")]
    Io(String),
}

impl PanelError {
    /// Zero-based data row the error points at, when there is one.
    pub fn row(&self) -> Option<usize> {
        match self {
            PanelError::Parse { row, .. }
            | PanelError::NegativeCount { row, .. }
            | PanelError::NonContiguous { row, .. }
            | PanelError::PartiallyBlank { row, .. } => Some(*row),
            PanelError::NegativeOccupancy { day } => Some(*day),
            _ => None,
        }
    }
}

/// Errors raised by estimation, forecasting and simulation routines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum EstimationError {
    #[error("invalid bandwidths: {0}")]
    InvalidBandwidths(String),
    #[error("invalid time grid: {0}")]
    InvalidGrid(String),
    #[error("record {index}: {message}")]
    InvalidRecord { index: usize, message: String },
    #[error("no usable bandwidth")]
    NoUsableBandwidth,
    #[error("empty candidate list")]
    EmptyCandidates,
    #[error("ratio requires out-of-hospital deaths")]
    MissingOutOfHospitalDeaths,
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("unknown {kind} `{name}`")]
    UnknownStrategy { kind: &'static str, name: String },
    #[error("invalid simulation model: {0}")]
    InvalidModel(String),
    #[error(transparent)]
    Panel(#[from] PanelError),
}
