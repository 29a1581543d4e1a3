//! Semi-dual objective of one Bregman subproblem, in log-stabilized form.
//!
//! For a fixed plan `X` the semi-dual is
//! `L(γ) = η Σ_i a_i log Σ_j X_ij exp((γ_j − C_ij)/η) − bᵀγ`, with row-softmax
//! `P(γ)`, gradient `Pᵀa − b` and Hessian `(diag(Pᵀa) − Pᵀ diag(a) P)/η`.

use crate::error::{OtError, Result};
use crate::krylov::LinearOperator;
use crate::matrix::{dot, DenseMatrix};
use crate::par;
use crate::problem::{LogPlan, OtProblem};

/// Inner dual iterate `γ`, tagged with the outer iteration it belongs to.
#[derive(Debug, Clone, PartialEq)]
pub struct DualState {
    pub gamma: Vec<f64>,
    pub generation: usize,
}

impl DualState {
    pub fn zeros(n: usize, generation: usize) -> Self {
        Self {
            gamma: vec![0.0; n],
            generation,
        }
    }

    pub fn sum(&self) -> f64 {
        self.gamma.iter().sum()
    }

    /// Shifts `γ` onto the zero-sum slice; returns the removed mean.
    pub fn recenter(&mut self) -> f64 {
        recenter(&mut self.gamma)
    }
}

pub(crate) fn recenter(gamma: &mut [f64]) -> f64 {
    let mean = gamma.iter().sum::<f64>() / gamma.len() as f64;
    for g in gamma.iter_mut() {
        *g -= mean;
    }
    mean
}

/// Row-stochastic `P(γ)` together with the stabilized per-row log-normalizers.
#[derive(Debug, Clone)]
pub struct RowSoftmaxCache {
    p: DenseMatrix,
    /// `log Σ_j X_ij exp((γ_j − C_ij)/η)` per row.
    row_lse: Vec<f64>,
}

impl RowSoftmaxCache {
    pub fn p(&self) -> &DenseMatrix {
        &self.p
    }

    pub fn row_logsumexp(&self) -> &[f64] {
        &self.row_lse
    }

    /// Row potential `ζ(γ)_i = η log a_i − η · row_lse_i` eliminated by the semi-dual.
    pub fn zeta(&self, problem: &OtProblem, eta: f64) -> Vec<f64> {
        problem
            .source()
            .iter()
            .zip(&self.row_lse)
            .map(|(a, l)| eta * a.ln() - eta * l)
            .collect()
    }
}

fn check_shapes(plan: &LogPlan, gamma: &[f64], problem: &OtProblem) -> Result<()> {
    if plan.shape() != (problem.m(), problem.n()) || gamma.len() != problem.n() {
        return Err(OtError::ShapeMismatch(format!(
            "plan {:?}, gamma {}, problem {}x{}",
            plan.shape(),
            gamma.len(),
            problem.m(),
            problem.n()
        )));
    }
    Ok(())
}

/// Computes `P(γ)` row by row with max-subtraction.
pub fn compute_p(
    plan: &LogPlan,
    gamma: &[f64],
    problem: &OtProblem,
    eta: f64,
) -> Result<RowSoftmaxCache> {
    check_shapes(plan, gamma, problem)?;
    let (m, n) = plan.shape();
    let logx = plan.log_entries();
    let cost = problem.cost();
    let inv_eta = 1.0 / eta;
    let mut p = DenseMatrix::zeros(m, n);
    let mut row_lse = vec![0.0; m];
    par::for_each_row_with(p.as_mut_slice(), n, &mut row_lse, |i, row, lse| {
        let (lx, c) = (logx.row(i), cost.row(i));
        let mut max = f64::NEG_INFINITY;
        for j in 0..n {
            let z = lx[j] + (gamma[j] - c[j]) * inv_eta;
            row[j] = z;
            max = max.max(z);
        }
        let mut s = 0.0;
        for x in row.iter_mut() {
            *x = (*x - max).exp();
            s += *x;
        }
        let inv = 1.0 / s;
        for x in row.iter_mut() {
            *x *= inv;
        }
        *lse = max + s.ln();
    });
    if row_lse.iter().any(|l| !l.is_finite()) {
        return Err(OtError::NumericalOverflow("compute_p"));
    }
    Ok(RowSoftmaxCache { p, row_lse })
}

/// `L(γ) = −bᵀγ + η Σ a_i row_lse_i`.
pub fn semidual_value(
    cache: &RowSoftmaxCache,
    gamma: &[f64],
    problem: &OtProblem,
    eta: f64,
) -> f64 {
    eta * dot(problem.source(), &cache.row_lse) - dot(problem.target(), gamma)
}

/// `g = Pᵀa − b`.
pub fn semidual_gradient(cache: &RowSoftmaxCache, problem: &OtProblem) -> Vec<f64> {
    let mut g = par::weighted_col_sums(&cache.p, Some(problem.source()));
    for (gj, bj) in g.iter_mut().zip(problem.target()) {
        *gj -= bj;
    }
    g
}

/// Exact semi-dual Hessian as a matrix-free operator.
pub struct ExactHessianOp<'a> {
    p: &'a DenseMatrix,
    weights: &'a [f64],
    eta: f64,
    diag: Vec<f64>,
}

impl<'a> ExactHessianOp<'a> {
    pub fn new(cache: &'a RowSoftmaxCache, problem: &'a OtProblem, eta: f64) -> Self {
        let diag = par::weighted_col_sums(&cache.p, Some(problem.source()));
        Self {
            p: &cache.p,
            weights: problem.source(),
            eta,
            diag,
        }
    }
}

impl LinearOperator for ExactHessianOp<'_> {
    fn dim(&self) -> usize {
        self.p.cols()
    }

    fn apply(&self, v: &[f64], out: &mut [f64]) {
        let n = self.p.cols();
        let (p, a) = (self.p, self.weights);
        let ptw = par::accumulate_rows(p.rows(), n, 2 * n, |i, acc| {
            let row = p.row(i);
            let w = a[i] * dot(row, v);
            for (x, pij) in acc.iter_mut().zip(row) {
                *x += w * pij;
            }
        });
        let inv_eta = 1.0 / self.eta;
        for j in 0..n {
            out[j] = (self.diag[j] * v[j] - ptw[j]) * inv_eta;
        }
    }
}

/// `(1/η)(diag(Pᵀa) v − Pᵀ(a ⊙ P v))` without forming the n×n Hessian.
pub fn hessian_matvec_exact(
    cache: &RowSoftmaxCache,
    problem: &OtProblem,
    eta: f64,
    v: &[f64],
) -> Vec<f64> {
    let op = ExactHessianOp::new(cache, problem, eta);
    let mut out = vec![0.0; v.len()];
    op.apply(v, &mut out);
    out
}

/// Log of the next outer iterate `diag(a) P(γ)`, recomputed from the
/// exponents so that entries underflowing in `P` keep their log value.
pub fn next_plan(
    plan: &LogPlan,
    gamma: &[f64],
    cache: &RowSoftmaxCache,
    problem: &OtProblem,
    eta: f64,
) -> Result<LogPlan> {
    check_shapes(plan, gamma, problem)?;
    let (m, n) = plan.shape();
    let logx = plan.log_entries();
    let cost = problem.cost();
    let a = problem.source();
    let inv_eta = 1.0 / eta;
    let mut out = DenseMatrix::zeros(m, n);
    par::for_each_row(out.as_mut_slice(), n, |i, row| {
        let shift = a[i].ln() - cache.row_lse[i];
        let (lx, c) = (logx.row(i), cost.row(i));
        for j in 0..n {
            row[j] = lx[j] + (gamma[j] - c[j]) * inv_eta + shift;
        }
    });
    LogPlan::from_log_entries(out)
}

/// Largest `|t Δ_j / η|` for which [`value_change`] uses the cancellation-free form.
const SMALL_STEP_EXPONENT: f64 = 100.0;

/// `expm1(x) − x`, accurate for small `|x|`.
fn expm1_minus_x(x: f64) -> f64 {
    if x.abs() < 1e-2 {
        // x²/2! + x³/3! + … + x⁸/8!
        let mut term = x * x / 2.0;
        let mut sum = term;
        for k in 3..=8 {
            term *= x / k as f64;
            sum += term;
        }
        sum
    } else {
        x.exp_m1() - x
    }
}

/// `L(γ + tΔ) − L(γ)` evaluated from the cached `P(γ)` without subtracting
/// two O(1) objective values.
///
/// Uses `t gᵀΔ + η Σ_i a_i log Σ_j P_ij exp(s_ij − c_i)` with `s_j = tΔ_j/η`
/// and `c_i = Σ_j P_ij s_j`; every summand inside the log is nonnegative.
/// Returns `None` when the step exponents are too large for this form.
pub fn value_change(
    cache: &RowSoftmaxCache,
    gradient: &[f64],
    direction: &[f64],
    t: f64,
    problem: &OtProblem,
    eta: f64,
) -> Option<f64> {
    let scale = t / eta;
    let smax = direction
        .iter()
        .fold(0.0f64, |m, d| m.max((d * scale).abs()));
    if !(smax <= SMALL_STEP_EXPONENT) {
        return None;
    }
    let s: Vec<f64> = direction.iter().map(|d| d * scale).collect();
    let p = &cache.p;
    let phi = par::map_indices(p.rows(), p.cols(), |i| {
        let row = p.row(i);
        let c = dot(row, &s);
        let q: f64 = row
            .iter()
            .zip(&s)
            .map(|(pij, sj)| pij * expm1_minus_x(sj - c))
            .sum();
        q.ln_1p()
    });
    Some(t * dot(gradient, direction) + eta * dot(problem.source(), &phi))
}
