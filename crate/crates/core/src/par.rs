//! Row-parallel kernel helpers.
//!
//! Every helper has a rayon path (feature `parallel`) and a sequential path.
//! Cross-row reductions always use fixed-size row chunks merged in chunk
//! order, so both paths return bitwise-identical results for any thread count.

use std::sync::atomic::{AtomicBool, Ordering};

#[cfg(feature = "parallel")]
use rayon::prelude::*;

use crate::matrix::DenseMatrix;

/// Rows per partial accumulator in column reductions.
pub const ROW_CHUNK: usize = 64;

/// Below this many touched entries the parallel path is skipped.
#[cfg(feature = "parallel")]
const PAR_MIN_WORK: usize = 1 << 14;

static FORCE_SEQUENTIAL: AtomicBool = AtomicBool::new(false);

/// Forces the sequential path at runtime even when `parallel` is compiled in.
pub fn set_sequential(on: bool) {
    FORCE_SEQUENTIAL.store(on, Ordering::Relaxed);
}

/// True when kernels may dispatch to rayon.
pub fn parallel_enabled() -> bool {
    cfg!(feature = "parallel") && !FORCE_SEQUENTIAL.load(Ordering::Relaxed)
}

/// Runs `f` with kernels limited to `threads` workers (`None` keeps the
/// global pool). One thread selects the sequential path.
pub fn with_threads<T, F>(threads: Option<usize>, f: F) -> T
where
    T: Send,
    F: FnOnce() -> T + Send,
{
    match threads {
        Some(1) => {
            let before = FORCE_SEQUENTIAL.swap(true, Ordering::Relaxed);
            let out = f();
            FORCE_SEQUENTIAL.store(before, Ordering::Relaxed);
            out
        }
        #[cfg(feature = "parallel")]
        Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
            Ok(pool) => pool.install(f),
            Err(_) => f(),
        },
        _ => f(),
    }
}

#[cfg(feature = "parallel")]
#[inline]
fn go_parallel(work: usize) -> bool {
    parallel_enabled() && work >= PAR_MIN_WORK
}

/// Applies `f(i, row_i)` to every row of a row-major buffer.
pub fn for_each_row<F>(data: &mut [f64], cols: usize, f: F)
where
    F: Fn(usize, &mut [f64]) + Sync + Send,
{
    if cols == 0 {
        return;
    }
    #[cfg(feature = "parallel")]
    if go_parallel(data.len()) {
        data.par_chunks_mut(cols)
            .enumerate()
            .for_each(|(i, row)| f(i, row));
        return;
    }
    data.chunks_mut(cols)
        .enumerate()
        .for_each(|(i, row)| f(i, row));
}

/// Applies `f(i, row_i, &mut out[i])` to every row, pairing rows with per-row outputs.
pub fn for_each_row_with<T, F>(data: &mut [f64], cols: usize, out: &mut [T], f: F)
where
    T: Send,
    F: Fn(usize, &mut [f64], &mut T) + Sync + Send,
{
    if cols == 0 {
        return;
    }
    debug_assert_eq!(data.len(), cols * out.len());
    #[cfg(feature = "parallel")]
    if go_parallel(data.len()) {
        data.par_chunks_mut(cols)
            .zip(out.par_iter_mut())
            .enumerate()
            .for_each(|(i, (row, o))| f(i, row, o));
        return;
    }
    data.chunks_mut(cols)
        .zip(out.iter_mut())
        .enumerate()
        .for_each(|(i, (row, o))| f(i, row, o));
}

/// Collects `f(i)` for `i in 0..n`; `cost` estimates the entries touched per item.
pub fn map_indices<T, F>(n: usize, cost: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if go_parallel(n.saturating_mul(cost)) {
        return (0..n).into_par_iter().map(f).collect();
    }
    #[cfg(not(feature = "parallel"))]
    let _ = cost;
    (0..n).map(f).collect()
}

/// Sums per-row contributions into a length-`width` accumulator.
///
/// `f(i, acc)` adds row `i`'s contribution to `acc`. Rows are grouped in
/// chunks of [`ROW_CHUNK`]; chunk partials are merged in order.
pub fn accumulate_rows<F>(nrows: usize, width: usize, cost: usize, f: F) -> Vec<f64>
where
    F: Fn(usize, &mut [f64]) + Sync + Send,
{
    let nchunks = nrows.div_ceil(ROW_CHUNK);
    let partial = |c: usize| {
        let mut acc = vec![0.0; width];
        let end = ((c + 1) * ROW_CHUNK).min(nrows);
        for i in c * ROW_CHUNK..end {
            f(i, &mut acc);
        }
        acc
    };
    if nchunks <= 1 {
        return if nchunks == 0 {
            vec![0.0; width]
        } else {
            partial(0)
        };
    }
    let partials = map_indices(nchunks, ROW_CHUNK * cost, partial);
    let mut out = vec![0.0; width];
    for p in &partials {
        for (o, x) in out.iter_mut().zip(p) {
            *o += x;
        }
    }
    out
}

/// Column sums of `diag(w) M`, or plain column sums when `weights` is `None`.
pub fn weighted_col_sums(m: &DenseMatrix, weights: Option<&[f64]>) -> Vec<f64> {
    accumulate_rows(m.rows(), m.cols(), m.cols(), |i, acc| {
        let w = weights.map_or(1.0, |w| w[i]);
        for (a, x) in acc.iter_mut().zip(m.row(i)) {
            *a += w * x;
        }
    })
}
