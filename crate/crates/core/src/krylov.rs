//! Conjugate gradient for the shifted Newton system `(H + s I) x = rhs`.

use crate::error::{OtError, Result};
use crate::matrix::{dot, norm2};

/// A symmetric operator applied matrix-free.
pub trait LinearOperator {
    fn dim(&self) -> usize;
    fn apply(&self, x: &[f64], out: &mut [f64]);
}

/// The zero operator, for exercising the pure shift.
pub struct ZeroOp(pub usize);

impl LinearOperator for ZeroOp {
    fn dim(&self) -> usize {
        self.0
    }

    fn apply(&self, _x: &[f64], out: &mut [f64]) {
        out.fill(0.0);
    }
}

#[derive(Debug, Clone)]
pub struct CgOutcome {
    pub solution: Vec<f64>,
    pub iters: usize,
    pub final_residual: f64,
}

/// Solves `(op + shift·I) x = rhs` by plain CG from `x₀ = 0`.
///
/// Stops when `‖r‖ ≤ rel_tol·‖rhs‖` or after `max_iters`. Since `x₀ = 0`,
/// iterates stay in the Krylov span of `rhs`; a zero-sum `rhs` and an
/// operator with `op·1 = 0` keep every iterate zero-sum.
pub fn cg_solve<A: LinearOperator + ?Sized>(
    op: &A,
    shift: f64,
    rhs: &[f64],
    rel_tol: f64,
    max_iters: usize,
) -> Result<CgOutcome> {
    cg_solve_with(op, shift, rhs, rel_tol, max_iters, |_, _| {})
}

/// [`cg_solve`] with a callback receiving `(iteration, iterate)` after each update.
pub fn cg_solve_with<A, F>(
    op: &A,
    shift: f64,
    rhs: &[f64],
    rel_tol: f64,
    max_iters: usize,
    mut observe: F,
) -> Result<CgOutcome>
where
    A: LinearOperator + ?Sized,
    F: FnMut(usize, &[f64]),
{
    let n = op.dim();
    if rhs.len() != n {
        return Err(OtError::ShapeMismatch(format!(
            "rhs {} vs operator {n}",
            rhs.len()
        )));
    }
    let rhs_norm = norm2(rhs);
    let mut x = vec![0.0; n];
    if rhs_norm == 0.0 {
        return Ok(CgOutcome {
            solution: x,
            iters: 0,
            final_residual: 0.0,
        });
    }
    if shift == 0.0 {
        let s: f64 = rhs.iter().sum();
        if s.abs() > 1e-10 * rhs_norm * (n as f64).sqrt() {
            return Err(OtError::InconsistentSystem(s));
        }
    }
    let target = rel_tol * rhs_norm;
    let mut r = rhs.to_vec();
    let mut p = r.clone();
    let mut ap = vec![0.0; n];
    let mut rr = dot(&r, &r);
    let mut iters = 0;
    while iters < max_iters {
        op.apply(&p, &mut ap);
        for (y, pj) in ap.iter_mut().zip(&p) {
            *y += shift * pj;
        }
        let pap = dot(&p, &ap);
        if !(pap > 0.0) {
            // a vanishing curvature with a vanishing residual is convergence, not breakdown
            if rr.sqrt() <= 1e3 * f64::EPSILON * rhs_norm {
                break;
            }
            return Err(OtError::NotPositiveDefinite(pap));
        }
        let alpha = rr / pap;
        for j in 0..n {
            x[j] += alpha * p[j];
            r[j] -= alpha * ap[j];
        }
        iters += 1;
        observe(iters, &x);
        let rr_next = dot(&r, &r);
        if rr_next.sqrt() <= target {
            rr = rr_next;
            break;
        }
        let beta = rr_next / rr;
        rr = rr_next;
        for j in 0..n {
            p[j] = r[j] + beta * p[j];
        }
    }
    Ok(CgOutcome {
        solution: x,
        iters,
        final_residual: rr.sqrt(),
    })
}

/// Dense symmetric operator, used by tests and small diagnostics.
pub struct DenseOp {
    pub n: usize,
    pub data: Vec<f64>,
}

impl LinearOperator for DenseOp {
    fn dim(&self) -> usize {
        self.n
    }

    fn apply(&self, x: &[f64], out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate() {
            *o = dot(&self.data[i * self.n..(i + 1) * self.n], x);
        }
    }
}
