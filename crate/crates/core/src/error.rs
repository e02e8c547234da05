use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("unsupported antenna count M = {0}; closed-form DBLAST gains exist only for M = 2")]
    UnsupportedDimension(usize),

    #[error("length mismatch for {what}: expected {expected}, got {actual}")]
    LengthMismatch {
        what: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid degree profile: {0}")]
    InvalidProfile(String),

    #[error("degree profile is not realizable with {requested} variable nodes; nearest feasible size is {nearest}")]
    NotRealizable { requested: usize, nearest: usize },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("densities live on different grids")]
    GridMismatch,

    #[error("no threshold bracket in [{lo_db}, {hi_db}] dB; scan trace: {trace}")]
    BracketNotFound { lo_db: f64, hi_db: f64, trace: String },

    #[error("infeasible constraint set: {0}")]
    Infeasible(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("CSV error on {path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
