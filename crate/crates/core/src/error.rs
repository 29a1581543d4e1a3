use std::path::PathBuf;

use thiserror::Error;

/// Which marginal an error refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Source,
    Target,
}

impl std::fmt::Display for Side {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Side::Source => f.write_str("source marginal a"),
            Side::Target => f.write_str("target marginal b"),
        }
    }
}

#[derive(Debug, Error)]
pub enum OtError {
    #[error("invalid cost entry {value} at ({row}, {col})")]
    InvalidCost { row: usize, col: usize, value: f64 },
    #[error("{side} entry {index} is not strictly positive: {value}")]
    MarginalNotPositive {
        side: Side,
        index: usize,
        value: f64,
    },
    #[error("{side} sums to {sum}, expected 1")]
    MarginalNotNormalized { side: Side, sum: f64 },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("non-finite value after stabilization in {0}")]
    NumericalOverflow(&'static str),
    #[error("shifted system with zero shift has right-hand side off the zero-sum subspace (1^T rhs = {0})")]
    InconsistentSystem(f64),
    #[error("conjugate gradient breakdown: p^T A p = {0}")]
    NotPositiveDefinite(f64),
    #[error("Armijo backtracking exceeded {0} trials")]
    LineSearchStalled(usize),
    #[error("Sinkhorn warm start did not reach tolerance within {0} sweeps")]
    WarmStartStalled(usize),
    #[error("numerical failure: {0}")]
    NumericalFailure(String),
    #[error("instance with {0} cells exceeds the exact oracle limit")]
    OracleTooLarge(usize),
    #[error("exact oracle failed: {0}")]
    OracleFailed(String),
    #[error("dimension {0} exceeds the dense test-helper limit")]
    TestOnlyLimit(usize),
    #[error("trajectory clock went backwards: {previous} -> {next}")]
    ClockError { previous: f64, next: f64 },
    #[error("{}: {msg}", path.display())]
    LoadError { path: PathBuf, msg: String },
}

pub type Result<T> = std::result::Result<T, OtError>;
