use thiserror::Error;

use crate::operators::LowRankFactors;
use crate::solver::SolverReport;

/// Errors shared across the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("index ({row}, {col}) out of bounds for {nrows}x{ncols} matrix")]
    IndexOutOfBounds {
        row: usize,
        col: usize,
        nrows: usize,
        ncols: usize,
    },

    #[error("duplicate entry at ({row}, {col})")]
    DuplicateEntry { row: usize, col: usize },

    /// Truncated SVD failed to reach the requested residual tolerance.
    /// Carries the best factors found and the worst Ritz-pair residual
    /// so callers can decide whether the iterate is still usable.
    #[error("svd did not converge: residual {residual:.3e} (tol {tol:.3e}) after {restarts} restarts")]
    SvdConvergence {
        residual: f64,
        tol: f64,
        restarts: usize,
        best: Box<LowRankFactors>,
        context: String,
    },

    /// Solver terminated without meeting its stopping rule (stage cap,
    /// stagnation, or time limit). Partial results are attached so the
    /// caller can still write them out.
    #[error("solver did not converge: {reason}")]
    SolverStalled {
        reason: String,
        factors: Box<LowRankFactors>,
        report: Box<SolverReport>,
    },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;
