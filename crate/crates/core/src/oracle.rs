//! Exact LP solutions for small instances.

use std::collections::VecDeque;

use crate::error::{OtError, Result};
use crate::feasibility::FeasiblePlan;
use crate::matrix::DenseMatrix;
use crate::problem::OtProblem;

/// Largest `m·n` accepted by [`exact_small_lp`].
pub const ORACLE_MAX_CELLS: usize = 4096;

/// Reduced costs above `-REDUCED_COST_TOL` count as optimal.
const REDUCED_COST_TOL: f64 = 1e-13;

/// Basic flows at or below this count as zero when choosing the leaving cell.
const FLOW_EPS: f64 = 1e-15;

/// Consecutive degenerate pivots before switching to Bland's rule.
const DEGENERATE_SWITCH: usize = 50;

/// Northwest-corner coupling: fill `(i, j)` greedily from `(0, 0)`.
pub fn northwest_monotone(a: &[f64], b: &[f64]) -> FeasiblePlan {
    let (m, n) = (a.len(), b.len());
    let mut x = DenseMatrix::zeros(m, n);
    let (mut ra, mut rb) = (a.to_vec(), b.to_vec());
    let (mut i, mut j) = (0, 0);
    while i < m && j < n {
        let t = ra[i].min(rb[j]);
        x.set(i, j, t);
        ra[i] -= t;
        rb[j] -= t;
        let (row_done, col_done) = (ra[i] <= 0.0, rb[j] <= 0.0);
        if row_done {
            i += 1;
        }
        if col_done {
            j += 1;
        }
        if !row_done && !col_done {
            // unreachable in exact arithmetic: min() empties one side
            if ra[i] < rb[j] {
                i += 1;
            } else {
                j += 1;
            }
        }
    }
    FeasiblePlan::from_entries_unchecked(x)
}

/// Optimal plan, value and potentials `u_i + v_j ≤ C_ij`.
#[derive(Debug, Clone)]
pub struct ExactSolution {
    pub plan: FeasiblePlan,
    pub value: f64,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
    pub pivots: usize,
}

/// Spanning-tree basis of the bipartite transportation graph; rows are
/// nodes `0..m`, columns `m..m+n`.
struct Basis {
    m: usize,
    n: usize,
    cells: Vec<(usize, usize)>,
    flow: Vec<f64>,
}

impl Basis {
    fn adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.m + self.n];
        for (e, &(i, j)) in self.cells.iter().enumerate() {
            adj[i].push(e);
            adj[self.m + j].push(e);
        }
        adj
    }

    fn other(&self, e: usize, node: usize) -> usize {
        let (i, j) = self.cells[e];
        if node == i {
            self.m + j
        } else {
            i
        }
    }

    /// Flows from the marginals by repeatedly peeling leaves.
    fn recompute_flows(&mut self, a: &[f64], b: &[f64]) -> Result<()> {
        let adj = self.adjacency();
        let mut rest: Vec<f64> = a.iter().chain(b).copied().collect();
        let mut deg: Vec<usize> = adj.iter().map(Vec::len).collect();
        let mut used = vec![false; self.cells.len()];
        let mut queue: VecDeque<usize> = (0..deg.len()).filter(|&v| deg[v] == 1).collect();
        let mut assigned = 0;
        while let Some(v) = queue.pop_front() {
            if deg[v] != 1 {
                continue;
            }
            let e = match adj[v].iter().copied().find(|&e| !used[e]) {
                Some(e) => e,
                None => continue,
            };
            used[e] = true;
            assigned += 1;
            let w = self.other(e, v);
            self.flow[e] = rest[v];
            rest[w] -= rest[v];
            rest[v] = 0.0;
            deg[v] = 0;
            deg[w] -= 1;
            if deg[w] == 1 {
                queue.push_back(w);
            }
        }
        if assigned != self.cells.len() {
            return Err(OtError::OracleFailed("basis is not a spanning tree".into()));
        }
        Ok(())
    }

    /// Potentials with `u_0 = 0` and `u_i + v_j = C_ij` on basic cells.
    fn potentials(&self, cost: &DenseMatrix) -> (Vec<f64>, Vec<f64>) {
        let adj = self.adjacency();
        let mut pot = vec![f64::NAN; self.m + self.n];
        pot[0] = 0.0;
        let mut stack = vec![0];
        while let Some(v) = stack.pop() {
            for &e in &adj[v] {
                let w = self.other(e, v);
                if pot[w].is_nan() {
                    let (i, j) = self.cells[e];
                    pot[w] = cost.get(i, j) - pot[v];
                    stack.push(w);
                }
            }
        }
        let v = pot.split_off(self.m);
        (pot, v)
    }

    /// Basic cells on the tree path from row `i` to column `j`, in order.
    fn path(&self, i: usize, j: usize) -> Vec<usize> {
        let adj = self.adjacency();
        let target = self.m + j;
        let mut parent = vec![usize::MAX; self.m + self.n];
        let mut seen = vec![false; self.m + self.n];
        seen[i] = true;
        let mut queue = VecDeque::from([i]);
        while let Some(v) = queue.pop_front() {
            if v == target {
                break;
            }
            for &e in &adj[v] {
                let w = self.other(e, v);
                if !seen[w] {
                    seen[w] = true;
                    parent[w] = e;
                    queue.push_back(w);
                }
            }
        }
        let mut edges = Vec::new();
        let mut v = target;
        while v != i {
            let e = parent[v];
            edges.push(e);
            v = self.other(e, v);
        }
        edges.reverse();
        edges
    }
}

fn northwest_basis(a: &[f64], b: &[f64]) -> Basis {
    let (m, n) = (a.len(), b.len());
    let mut cells = Vec::with_capacity(m + n - 1);
    let (mut ra, mut rb) = (a.to_vec(), b.to_vec());
    let (mut i, mut j) = (0, 0);
    loop {
        let t = ra[i].min(rb[j]);
        cells.push((i, j));
        ra[i] -= t;
        rb[j] -= t;
        if i == m - 1 && j == n - 1 {
            break;
        }
        // exactly one index advances per cell, giving m + n − 1 cells
        if i == m - 1 || (j < n - 1 && ra[i] > rb[j]) {
            j += 1;
        } else {
            i += 1;
        }
    }
    let flow = vec![0.0; cells.len()];
    Basis { m, n, cells, flow }
}

/// Solves the transportation LP exactly by the network simplex method.
///
/// Dantzig pricing, falling back to Bland's rule after a run of degenerate
/// pivots so that degenerate (e.g. uniform-marginal) instances cannot cycle.
pub fn exact_small_lp(problem: &OtProblem) -> Result<ExactSolution> {
    let (m, n) = (problem.m(), problem.n());
    if m * n > ORACLE_MAX_CELLS {
        return Err(OtError::OracleTooLarge(m * n));
    }
    let (a, b, cost) = (problem.source(), problem.target(), problem.cost());
    let mut basis = northwest_basis(a, b);
    basis.recompute_flows(a, b)?;
    let max_pivots = 100 * m * n + 1000;
    let mut degenerate_run = 0;
    let mut in_basis = vec![false; m * n];
    for &(i, j) in &basis.cells {
        in_basis[i * n + j] = true;
    }

    for pivots in 0..=max_pivots {
        let (u, v) = basis.potentials(cost);
        let bland = degenerate_run >= DEGENERATE_SWITCH;
        let mut entering = None;
        let mut best = -REDUCED_COST_TOL;
        'scan: for i in 0..m {
            for j in 0..n {
                if in_basis[i * n + j] {
                    continue;
                }
                let r = cost.get(i, j) - u[i] - v[j];
                if r < best {
                    entering = Some((i, j));
                    if bland {
                        break 'scan;
                    }
                    best = r;
                }
            }
        }
        let Some((ei, ej)) = entering else {
            let mut x = DenseMatrix::zeros(m, n);
            for (&(i, j), &f) in basis.cells.iter().zip(&basis.flow) {
                x.set(i, j, f.max(0.0));
            }
            let plan = FeasiblePlan::from_entries_unchecked(x);
            let value = plan.objective(cost);
            return Ok(ExactSolution {
                plan,
                value,
                u,
                v,
                pivots,
            });
        };

        // Odd positions on the path lose flow when (ei, ej) enters.
        let path = basis.path(ei, ej);
        let mut leave = None;
        let mut theta = f64::INFINITY;
        for &e in path.iter().step_by(2) {
            let f = if basis.flow[e] <= FLOW_EPS {
                0.0
            } else {
                basis.flow[e]
            };
            let (ci, cj) = basis.cells[e];
            let better = match leave {
                None => true,
                Some(l) => {
                    let (li, lj) = basis.cells[l];
                    f < theta || (f == theta && (ci, cj) < (li, lj))
                }
            };
            if better {
                theta = f;
                leave = Some(e);
            }
        }
        let leave = leave.ok_or_else(|| OtError::OracleFailed("empty pivot cycle".into()))?;
        degenerate_run = if theta == 0.0 { degenerate_run + 1 } else { 0 };
        let (li, lj) = basis.cells[leave];
        in_basis[li * n + lj] = false;
        in_basis[ei * n + ej] = true;
        basis.cells[leave] = (ei, ej);
        basis.recompute_flows(a, b)?;
    }
    Err(OtError::OracleFailed(format!(
        "no optimum after {max_pivots} pivots"
    )))
}
