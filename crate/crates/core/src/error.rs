use thiserror::Error;

/// Errors produced by the geometry engine.
#[derive(Debug, Error)]
pub enum Error {
    #[error("field index {index} out of range for rank {rank}")]
    FieldIndex { index: usize, rank: usize },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("unknown structure: {0}")]
    UnknownStructure(String),

    #[error("trajectory escaped domain at t = {time} (|x| exceeded {bound})")]
    Escaped { time: f64, bound: f64 },

    #[error("time {0} is not a grid instant of the control")]
    OffGrid(f64),

    #[error("covector does not annihilate E^t (relative pairing {0:.3e})")]
    NotAnnihilating(f64),

    #[error("control is not minimizing: distance {distance} < length {length}")]
    NotMinimizing { distance: f64, length: f64 },

    #[error("no convergence: {0}")]
    NoConvergence(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Short machine-readable tag used in error reports.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::FieldIndex { .. } => "field_index",
            Error::Dimension { .. } => "dimension",
            Error::InvalidParameter(_) => "invalid_parameter",
            Error::UnknownStructure(_) => "unknown_structure",
            Error::Escaped { .. } => "escaped",
            Error::OffGrid(_) => "off_grid",
            Error::NotAnnihilating(_) => "not_annihilating",
            Error::NotMinimizing { .. } => "not_minimizing",
            Error::NoConvergence(_) => "no_convergence",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
            Error::Csv(_) => "csv",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
