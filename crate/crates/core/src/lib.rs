//! Inexact Bregman proximal point solver with sparsified Newton inner steps
//! for discrete optimal transport.

// `!(x > 0.0)` style guards are used on purpose so that NaN takes the safe branch.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod data;
pub mod error;
pub mod feasibility;
pub mod inner;
pub mod krylov;
pub mod matrix;
pub mod oracle;
pub mod outer;
pub mod par;
pub mod problem;
pub mod semidual;
pub mod sinkhorn;
pub mod sparsify;
pub mod trajectory;

pub use error::{OtError, Result, Side};
pub use matrix::DenseMatrix;
pub use outer::{
    eot_single_solve, ibsink_solve, ibsn_solve, sinkhorn_baseline, OuterResult, OuterStop,
};
pub use problem::{LogPlan, OtProblem, SolverConfig};
