//! Error type shared across the crate, with the process exit-code mapping
//! used by the `scopenav` binary.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration (bad dimensions, inconsistent fields, bad flags).
    #[error("config error: {0}")]
    Config(String),

    /// Invalid input data (non-finite values, broken invariants, bad arguments).
    #[error("input error: {0}")]
    Input(String),

    /// A rotated point landed on or behind the camera plane (p'_z <= eps).
    #[error("degenerate rotation: {0}")]
    DegenerateRotation(String),

    /// Pearson correlation of a constant series.
    #[error("undefined correlation: {0}")]
    UndefinedCorrelation(String),

    /// A depth bin was visited fewer times than the spread report requires.
    #[error("insufficient coverage: bins with fewer than {min_visits} visits: {bins:?}")]
    InsufficientCoverage { min_visits: usize, bins: Vec<usize> },

    /// A line of a structured text file failed to parse.
    #[error("parse error at {path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },

    /// File format or version not understood.
    #[error("unsupported format in {path}: {msg}")]
    Format { path: String, msg: String },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Exit code contract of the CLI: 0 success, 2 validation/config error,
    /// 3 runtime numeric error, 4 i/o error.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_)
            | Error::Input(_)
            | Error::InsufficientCoverage { .. }
            | Error::Parse { .. }
            | Error::Format { .. } => 2,
            Error::DegenerateRotation(_) | Error::UndefinedCorrelation(_) => 3,
            Error::Io(_) => 4,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
