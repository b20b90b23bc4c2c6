use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: line {line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },
    #[error("domain error: {0}")]
    Domain(String),
    #[error("molecule {0} has no target energy")]
    MissingEnergy(String),
    #[error("invalid radial profile for z={z}: {msg}")]
    Profile { z: u32, msg: String },
    #[error("no radial profile for element z={0}")]
    MissingProfile(u32),
    #[error("molecule {id} does not fit the grid: {msg}")]
    Margin { id: String, msg: String },
    #[error("filter bank aliasing: {0}")]
    Aliasing(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("size mismatch: expected {expected}, got {got}")]
    SizeMismatch { expected: usize, got: usize },
    #[error("degenerate split: {0}")]
    DegenerateSplit(String),
    #[error("linear solve failed (condition estimate {condition:.3e}): {msg}")]
    LinearSolve { condition: f64, msg: String },
    #[error("quadrature did not converge on [{a}, {b}] (error estimate {estimate:.3e})")]
    Quadrature { a: f64, b: f64, estimate: f64 },
    #[error("degenerate fit: {0}")]
    DegenerateFit(String),
    #[error("unknown aggregation key `{0}`")]
    UnknownKey(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// True for errors caused by bad input rather than a defect in this crate.
    pub fn is_user_error(&self) -> bool {
        !matches!(self, Error::LinearSolve { .. } | Error::Quadrature { .. })
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Error::Parse { .. } => "parse",
            Error::Domain(_) => "domain",
            Error::MissingEnergy(_) => "missing_energy",
            Error::Profile { .. } => "profile",
            Error::MissingProfile(_) => "missing_profile",
            Error::Margin { .. } => "margin",
            Error::Aliasing(_) => "aliasing",
            Error::InvalidParameter(_) => "invalid_parameter",
            Error::SizeMismatch { .. } => "size_mismatch",
            Error::DegenerateSplit(_) => "degenerate_split",
            Error::LinearSolve { .. } => "linear_solve",
            Error::Quadrature { .. } => "quadrature",
            Error::DegenerateFit(_) => "degenerate_fit",
            Error::UnknownKey(_) => "unknown_key",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
            Error::Csv(_) => "csv",
        }
    }
}
