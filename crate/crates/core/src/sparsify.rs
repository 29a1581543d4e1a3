//! Thresholded, renormalized row-stochastic matrix `P_ρ` and the sparsified
//! Hessian `H_ρ = (diag(P_ρᵀa) − P_ρᵀ diag(a) P_ρ)/η`.
//!
//! Row `i⋆ = argmax a` is copied densely from `P` and never thresholded; it
//! touches every column, which pins `ker H_ρ` to `span{1}`.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{OtError, Result};
use crate::krylov::LinearOperator;
use crate::matrix::{dot, DenseMatrix};
use crate::par;
use crate::semidual::RowSoftmaxCache;

/// CSR storage of the thresholded rows plus the dense anchor row.
///
/// `row_offsets` has `m + 1` entries; the anchor's slot is empty.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseRowStochastic {
    row_offsets: Vec<usize>,
    col_indices: Vec<usize>,
    values: Vec<f64>,
    anchor_index: usize,
    anchor_row: Vec<f64>,
    fallback_rows: Vec<usize>,
}

impl SparseRowStochastic {
    pub fn rows(&self) -> usize {
        self.row_offsets.len() - 1
    }

    pub fn cols(&self) -> usize {
        self.anchor_row.len()
    }

    pub fn anchor_index(&self) -> usize {
        self.anchor_index
    }

    pub fn anchor_row(&self) -> &[f64] {
        &self.anchor_row
    }

    /// Stored (column, value) pairs of a non-anchor row.
    pub fn row_entries(&self, i: usize) -> (&[usize], &[f64]) {
        let (s, e) = (self.row_offsets[i], self.row_offsets[i + 1]);
        (&self.col_indices[s..e], &self.values[s..e])
    }

    /// Rows where every entry fell below the threshold and only the maximum was kept.
    pub fn fallback_rows(&self) -> &[usize] {
        &self.fallback_rows
    }

    /// Nonzeros including the dense anchor row.
    pub fn nnz(&self) -> usize {
        self.values.len() + self.anchor_row.len()
    }

    /// `(P_ρ v)_i`.
    #[inline]
    fn row_dot(&self, i: usize, v: &[f64]) -> f64 {
        if i == self.anchor_index {
            return dot(&self.anchor_row, v);
        }
        let (cols, vals) = self.row_entries(i);
        cols.iter().zip(vals).map(|(&j, p)| p * v[j]).sum()
    }

    /// `acc += w · P_ρ[i, :]`.
    #[inline]
    fn row_axpy(&self, i: usize, w: f64, acc: &mut [f64]) {
        if i == self.anchor_index {
            for (x, p) in acc.iter_mut().zip(&self.anchor_row) {
                *x += w * p;
            }
            return;
        }
        let (cols, vals) = self.row_entries(i);
        for (&j, p) in cols.iter().zip(vals) {
            acc[j] += w * p;
        }
    }

    /// `P_ρᵀ w`.
    pub fn transpose_apply(&self, w: &[f64]) -> Vec<f64> {
        let n = self.cols();
        let avg = self.nnz() / self.rows().max(1) + 1;
        par::accumulate_rows(self.rows(), n, avg, |i, acc| self.row_axpy(i, w[i], acc))
    }

    pub fn to_dense(&self) -> DenseMatrix {
        let mut d = DenseMatrix::zeros(self.rows(), self.cols());
        for i in 0..self.rows() {
            if i == self.anchor_index {
                d.row_mut(i).copy_from_slice(&self.anchor_row);
            } else {
                let (cols, vals) = self.row_entries(i);
                for (&j, &p) in cols.iter().zip(vals) {
                    d.set(i, j, p);
                }
            }
        }
        d
    }
}

/// Smallest index attaining `max a`.
pub fn choose_anchor(a: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in a.iter().enumerate() {
        if x > a[best] {
            best = i;
        }
    }
    best
}

/// `ρ = η ‖g‖ / (m n)`.
pub fn threshold_rho(eta: f64, m: usize, n: usize, grad_norm: f64) -> f64 {
    eta / (m as f64 * n as f64) * grad_norm
}

/// Keeps entries `P_ij ≥ ρ` of every non-anchor row and renormalizes them.
///
/// A row that keeps everything is copied unchanged. A row that keeps nothing
/// retains only its largest entry, set to 1.
pub fn sparsify_p(cache: &RowSoftmaxCache, rho: f64, anchor: usize) -> SparseRowStochastic {
    sparsify_dense(cache.p(), rho, anchor)
}

/// [`sparsify_p`] on a bare row-stochastic matrix.
pub fn sparsify_dense(p: &DenseMatrix, rho: f64, anchor: usize) -> SparseRowStochastic {
    let (m, n) = p.shape();
    assert!(anchor < m, "anchor {anchor} out of range for {m} rows");
    let rows: Vec<(Vec<usize>, Vec<f64>, bool)> = par::map_indices(m, n, |i| {
        if i == anchor {
            return (Vec::new(), Vec::new(), false);
        }
        let row = p.row(i);
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        let mut kept = 0.0;
        for (j, &x) in row.iter().enumerate() {
            if x >= rho && x > 0.0 {
                cols.push(j);
                vals.push(x);
                kept += x;
            }
        }
        if cols.is_empty() {
            let jmax = (0..n).fold(0, |b, j| if row[j] > row[b] { j } else { b });
            return (vec![jmax], vec![1.0], true);
        }
        let dropped = row.iter().any(|&x| x > 0.0 && x < rho);
        if dropped {
            let inv = 1.0 / kept;
            vals.iter_mut().for_each(|v| *v *= inv);
        }
        (cols, vals, false)
    });
    let mut row_offsets = Vec::with_capacity(m + 1);
    let mut col_indices = Vec::new();
    let mut values = Vec::new();
    let mut fallback_rows = Vec::new();
    row_offsets.push(0);
    for (i, (cols, vals, fallback)) in rows.into_iter().enumerate() {
        if fallback {
            fallback_rows.push(i);
        }
        col_indices.extend(cols);
        values.extend(vals);
        row_offsets.push(col_indices.len());
    }
    SparseRowStochastic {
        row_offsets,
        col_indices,
        values,
        anchor_index: anchor,
        anchor_row: p.row(anchor).to_vec(),
        fallback_rows,
    }
}

/// Matrix-free `H_ρ`.
#[derive(Debug, Clone)]
pub struct SparseHessianOp<'a> {
    p_rho: SparseRowStochastic,
    weights: &'a [f64],
    eta: f64,
    diag: Vec<f64>,
}

impl<'a> SparseHessianOp<'a> {
    pub fn new(p_rho: SparseRowStochastic, weights: &'a [f64], eta: f64) -> Self {
        let diag = p_rho.transpose_apply(weights);
        Self {
            p_rho,
            weights,
            eta,
            diag,
        }
    }

    pub fn p_rho(&self) -> &SparseRowStochastic {
        &self.p_rho
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn weights(&self) -> &[f64] {
        self.weights
    }

    /// `P_ρᵀ a`.
    pub fn diag(&self) -> &[f64] {
        &self.diag
    }

    /// Dense `H_ρ`, for small diagnostics only.
    pub fn to_dense(&self) -> DMatrix<f64> {
        dense_hessian(&self.p_rho.to_dense(), self.weights, self.eta)
    }
}

impl LinearOperator for SparseHessianOp<'_> {
    fn dim(&self) -> usize {
        self.p_rho.cols()
    }

    fn apply(&self, v: &[f64], out: &mut [f64]) {
        let p = &self.p_rho;
        let avg = p.nnz() / p.rows().max(1) + 1;
        let ptw = par::accumulate_rows(p.rows(), p.cols(), 2 * avg, |i, acc| {
            let w = self.weights[i] * p.row_dot(i, v);
            p.row_axpy(i, w, acc);
        });
        let inv_eta = 1.0 / self.eta;
        for j in 0..out.len() {
            out[j] = (self.diag[j] * v[j] - ptw[j]) * inv_eta;
        }
    }
}

/// `H_ρ v` in `O(nnz(P_ρ) + n)`.
pub fn hessian_matvec_sparse(op: &SparseHessianOp<'_>, v: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; v.len()];
    op.apply(v, &mut out);
    out
}

/// `(diag(Pᵀa) − Pᵀ diag(a) P)/η` assembled densely.
pub fn dense_hessian(p: &DenseMatrix, a: &[f64], eta: f64) -> DMatrix<f64> {
    let (m, n) = p.shape();
    let pm = DMatrix::from_row_slice(m, n, p.as_slice());
    let av = nalgebra::DVector::from_column_slice(a);
    let pta = pm.transpose() * &av;
    let weighted = DMatrix::from_fn(m, n, |i, j| a[i] * pm[(i, j)]);
    let mut h = -(pm.transpose() * weighted);
    for j in 0..n {
        h[(j, j)] += pta[j];
    }
    h / eta
}

/// Largest dimension the dense spectral helpers accept.
pub const DENSE_CHECK_LIMIT: usize = 64;

/// Extreme eigenvalues `(λ_min on 1⊥, λ_max)` of `H_ρ`, via dense eigendecomposition.
pub fn spectral_bounds_check(op: &SparseHessianOp<'_>) -> Result<(f64, f64)> {
    let n = op.dim();
    if n > DENSE_CHECK_LIMIT {
        return Err(OtError::TestOnlyLimit(n));
    }
    Ok(restricted_spectrum(&op.to_dense()))
}

/// `(λ_min of H on 1⊥, λ_max of H)` for a symmetric `H` with `H 1 = 0`.
pub fn restricted_spectrum(h: &DMatrix<f64>) -> (f64, f64) {
    let n = h.nrows();
    let lambda_max = SymmetricEigen::new(h.clone())
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    if n == 1 {
        return (f64::INFINITY, lambda_max);
    }
    // Householder reflector mapping e_0 to 1/√n; its other columns span 1⊥.
    let s = 1.0 / (n as f64).sqrt();
    let mut u = nalgebra::DVector::from_element(n, -s);
    u[0] += 1.0;
    let u = u.normalize();
    let q = DMatrix::identity(n, n) - 2.0 * &u * u.transpose();
    let restricted = (q.transpose() * h * &q)
        .view((1, 1), (n - 1, n - 1))
        .into_owned();
    let lambda_min = SymmetricEigen::new(restricted)
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min);
    (lambda_min, lambda_max)
}

/// `(‖E‖_∞, ‖E‖_1, ‖E‖_2)` of `E = P − P_ρ`, with the listed rows zeroed.
pub fn error_norms(p: &DenseMatrix, p_rho: &DenseMatrix, skip_rows: &[usize]) -> (f64, f64, f64) {
    let (m, n) = p.shape();
    let e = DMatrix::from_fn(m, n, |i, j| {
        if skip_rows.contains(&i) {
            0.0
        } else {
            p.get(i, j) - p_rho.get(i, j)
        }
    });
    let inf = (0..m)
        .map(|i| e.row(i).iter().map(|x| x.abs()).sum::<f64>())
        .fold(0.0, f64::max);
    let one = (0..n)
        .map(|j| e.column(j).iter().map(|x| x.abs()).sum::<f64>())
        .fold(0.0, f64::max);
    let two = e.singular_values().iter().copied().fold(0.0, f64::max);
    (inf, one, two)
}
