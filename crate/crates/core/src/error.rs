use thiserror::Error;

/// Errors raised by the numerical routines and the data harness.
#[derive(Debug, Error)]
pub enum CgpError {
    #[error("cholesky factorization failed for a {dim}x{dim} matrix (jitter ladder exhausted at {last_jitter:e})")]
    FactorizationFailure { dim: usize, last_jitter: f64 },

    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("optimizer diverged: {0}")]
    OptimizerDiverged(String),

    #[error("inducing locations {0} and {1} coincide")]
    DegenerateInducing(usize, usize),

    #[error("invalid range: {0}")]
    InvalidRange(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("back-transform requires a log-transformed series")]
    InvalidTransform,

    #[error("parse error at line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error("series is empty after ingestion")]
    EmptySeries,

    #[error("segment {index} failed: {source}")]
    Segment {
        index: usize,
        #[source]
        source: Box<CgpError>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl CgpError {
    pub(crate) fn mismatch(context: &'static str, expected: usize, found: usize) -> Self {
        CgpError::DimensionMismatch {
            context,
            expected,
            found,
        }
    }

    /// True for errors that come from the numerics rather than from inputs or I/O.
    pub fn is_numeric(&self) -> bool {
        match self {
            CgpError::FactorizationFailure { .. } | CgpError::OptimizerDiverged(_) => true,
            CgpError::Segment { source, .. } => source.is_numeric(),
            _ => false,
        }
    }
}

pub type Result<T, E = CgpError> = std::result::Result<T, E>;
