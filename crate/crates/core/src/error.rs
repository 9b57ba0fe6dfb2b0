use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected n = {expected}, got n = {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("scale must be positive and finite, got {0}")]
    NonPositiveScale(f64),

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("invalid mask: {0}")]
    InvalidMask(String),

    #[error("fields live on different grids")]
    GridMismatch,

    #[error("non-finite value {value} at node {node}")]
    NonFinite { node: usize, value: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("conjugate gradient did not converge after {iterations} iterations (relative residual {residual:e})")]
    CgNotConverged { iterations: usize, residual: f64 },

    #[error("{what} did not converge after {iterations} iterations (last change {change:e})")]
    NotConverged {
        what: &'static str,
        iterations: usize,
        change: f64,
    },

    #[error("zero field: {0}")]
    ZeroField(&'static str),

    #[error("supports overlap: {0}")]
    SupportOverlap(String),

    #[error("support escapes the domain: {0}")]
    SupportEscape(String),

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("bound violated: value {value} exceeds {bound} (tolerance {tol})")]
    BoundViolation { value: f64, bound: f64, tol: f64 },

    #[error("field file format error: {0}")]
    Format(String),

    #[error("payload length mismatch: expected {expected} bytes, found {found}")]
    LengthMismatch { expected: usize, found: usize },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures of an iterative method to reach its tolerance.
    pub fn is_convergence(&self) -> bool {
        matches!(self, Error::CgNotConverged { .. } | Error::NotConverged { .. })
    }
}
