use thiserror::Error;

/// Errors produced by the numerical core.
#[derive(Debug, Error)]
pub enum DmtError {
    #[error("{op}: shape mismatch, left {left:?} vs right {right:?}")]
    Shape {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },

    #[error("{op}: matrix is not symmetric (relative residual {residual:e})")]
    NotSymmetric { op: &'static str, residual: f64 },

    #[error("jacobi eigen-solver did not converge after {sweeps} sweeps (off-diagonal norm {residual:e})")]
    NoConvergence { sweeps: usize, residual: f64 },

    #[error("channel {channel} is not SPD (min eigenvalue {min_eigenvalue:e})")]
    NotSpd { channel: usize, min_eigenvalue: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("checkpoint mismatch: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, DmtError>;

pub(crate) fn invalid(msg: impl Into<String>) -> DmtError {
    DmtError::InvalidArgument(msg.into())
}
