//! Rounding onto the transport polytope, the entropic Bregman divergence,
//! and optimality certificates (relative KKT residual, objective gap).

use crate::matrix::{norm2, DenseMatrix};
use crate::problem::{LogPlan, LOG_FLOOR};

/// A plan with exact marginals.
#[derive(Debug, Clone, PartialEq)]
pub struct FeasiblePlan {
    entries: DenseMatrix,
}

impl FeasiblePlan {
    pub fn entries(&self) -> &DenseMatrix {
        &self.entries
    }

    pub fn into_entries(self) -> DenseMatrix {
        self.entries
    }

    /// Wraps a matrix already known to be feasible (oracle output, tests).
    pub fn from_entries_unchecked(entries: DenseMatrix) -> Self {
        Self { entries }
    }

    pub fn objective(&self, cost: &DenseMatrix) -> f64 {
        self.entries.dot(cost)
    }
}

/// Rounds a nonnegative matrix to a plan with marginals `a`, `b`.
///
/// Scales rows down to at most `a`, then columns of the row-scaled matrix
/// down to at most `b`, then adds the rank-one correction `e_r e_cᵀ/‖e_r‖₁`.
pub fn round_to_feasible(x: &DenseMatrix, a: &[f64], b: &[f64]) -> FeasiblePlan {
    let (m, n) = x.shape();
    debug_assert_eq!((m, n), (a.len(), b.len()));
    let mut f = x.clone();
    for (i, ai) in a.iter().enumerate() {
        let s: f64 = f.row(i).iter().sum();
        let z = if s > 0.0 { (ai / s).min(1.0) } else { 1.0 };
        if z < 1.0 {
            f.row_mut(i).iter_mut().for_each(|v| *v *= z);
        }
    }
    let col = f.col_sums();
    let y: Vec<f64> = col
        .iter()
        .zip(b)
        .map(|(&s, bj)| if s > 0.0 { (bj / s).min(1.0) } else { 1.0 })
        .collect();
    if y.iter().any(|&v| v < 1.0) {
        for i in 0..m {
            for (v, yj) in f.row_mut(i).iter_mut().zip(&y) {
                *v *= yj;
            }
        }
    }
    let e_r: Vec<f64> = f
        .row_sums()
        .iter()
        .zip(a)
        .map(|(s, ai)| (ai - s).max(0.0))
        .collect();
    let e_c: Vec<f64> = f
        .col_sums()
        .iter()
        .zip(b)
        .map(|(s, bj)| (bj - s).max(0.0))
        .collect();
    let norm_r: f64 = e_r.iter().sum();
    if norm_r > 0.0 {
        for (i, &r) in e_r.iter().enumerate() {
            let w = r / norm_r;
            if w == 0.0 {
                continue;
            }
            for (v, c) in f.row_mut(i).iter_mut().zip(&e_c) {
                *v += w * c;
            }
        }
    }
    FeasiblePlan { entries: f }
}

/// `D(X, Y) = Σ X log(X/Y) − ΣX + ΣY`, with `Y` given by its log entries.
///
/// Summed termwise (every term is nonnegative) with `0 log 0 = 0`. An entry
/// `X_ij > 0` over a floored `Y_ij` contributes a large finite amount.
pub fn bregman_div(x: &DenseMatrix, logy: &LogPlan) -> f64 {
    let ly = logy.log_entries();
    debug_assert_eq!(x.shape(), ly.shape());
    x.as_slice()
        .iter()
        .zip(ly.as_slice())
        .map(|(&xv, &l)| {
            let y = if l <= LOG_FLOOR { 0.0 } else { l.exp() };
            if xv > 0.0 {
                xv * (xv.ln() - l) - xv + y
            } else {
                y
            }
        })
        .sum()
}

/// `ζ_i = min_j (C_ij − γ_j)`.
pub fn c_transform(gamma: &[f64], cost: &DenseMatrix) -> Vec<f64> {
    (0..cost.rows())
        .map(|i| {
            cost.row(i)
                .iter()
                .zip(gamma)
                .map(|(c, g)| c - g)
                .fold(f64::INFINITY, f64::min)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct KktReport {
    pub delta_p: f64,
    pub delta_d: f64,
    pub delta_c: f64,
    pub delta_kkt: f64,
    pub zeta_used: Vec<f64>,
}

/// Relative KKT residual of `(X, γ)` with `ζ` from the c-transform.
pub fn kkt_residual(
    x: &DenseMatrix,
    gamma: &[f64],
    cost: &DenseMatrix,
    a: &[f64],
    b: &[f64],
) -> KktReport {
    let zeta = c_transform(gamma, cost);
    let row_err: Vec<f64> = x.row_sums().iter().zip(a).map(|(s, ai)| s - ai).collect();
    let col_err: Vec<f64> = x.col_sums().iter().zip(b).map(|(s, bj)| s - bj).collect();
    let neg = x
        .as_slice()
        .iter()
        .map(|v| v.min(0.0).powi(2))
        .sum::<f64>()
        .sqrt();
    let delta_p = (norm2(&row_err) / (1.0 + norm2(a)))
        .max(norm2(&col_err) / (1.0 + norm2(b)))
        .max(neg / (1.0 + x.frobenius_norm()));
    let denom = 1.0 + cost.frobenius_norm();
    let (mut dual_neg, mut compl) = (0.0, 0.0);
    for (i, &z) in zeta.iter().enumerate() {
        for (j, (&c, &xv)) in cost.row(i).iter().zip(x.row(i)).enumerate() {
            let u = c - z - gamma[j];
            dual_neg += u.min(0.0).powi(2);
            compl += xv * u;
        }
    }
    let delta_d = dual_neg.sqrt() / denom;
    let delta_c = compl.abs() / denom;
    KktReport {
        delta_p,
        delta_d,
        delta_c,
        delta_kkt: delta_p.max(delta_d).max(delta_c),
        zeta_used: zeta,
    }
}

/// `|<C, X̂> − f⋆|`.
pub fn gap(plan: &FeasiblePlan, cost: &DenseMatrix, optimal_value: f64) -> f64 {
    (plan.objective(cost) - optimal_value).abs()
}
