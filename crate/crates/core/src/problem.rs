//! Problem instances, solver configuration and the log-domain plan.

use crate::error::{OtError, Result, Side};
use crate::matrix::DenseMatrix;

/// Entries of a [`LogPlan`] are clamped from below to this value.
/// `exp(LOG_FLOOR)` underflows to exactly zero.
pub const LOG_FLOOR: f64 = -1e6;

/// Tolerance on `|sum(a) - 1|` and `|sum(b) - 1|`.
pub const MARGINAL_SUM_TOL: f64 = 1e-12;

/// A balanced discrete optimal transport instance `min <C, X>` over couplings of `a` and `b`.
#[derive(Debug, Clone, PartialEq)]
pub struct OtProblem {
    cost: DenseMatrix,
    a: Vec<f64>,
    b: Vec<f64>,
}

impl OtProblem {
    /// Validates and wraps an instance. The cost is taken as-is; see [`normalize_cost`].
    pub fn new(cost: DenseMatrix, a: Vec<f64>, b: Vec<f64>) -> Result<Self> {
        validate(&cost, &a, &b)?;
        Ok(Self { cost, a, b })
    }

    /// Normalizes the cost to unit max-norm, then validates.
    pub fn normalized(cost: DenseMatrix, a: Vec<f64>, b: Vec<f64>) -> Result<Self> {
        let cost = normalize_cost(&cost)?;
        Self::new(cost, a, b)
    }

    pub fn cost(&self) -> &DenseMatrix {
        &self.cost
    }

    pub fn source(&self) -> &[f64] {
        &self.a
    }

    pub fn target(&self) -> &[f64] {
        &self.b
    }

    pub fn m(&self) -> usize {
        self.a.len()
    }

    pub fn n(&self) -> usize {
        self.b.len()
    }
}

/// Checks every instance invariant, reporting the first violation.
///
/// Order: shapes, cost entries (row-major), source marginal, target marginal.
pub fn validate(cost: &DenseMatrix, a: &[f64], b: &[f64]) -> Result<()> {
    if a.is_empty() || b.is_empty() {
        return Err(OtError::ShapeMismatch("marginals must be nonempty".into()));
    }
    if cost.shape() != (a.len(), b.len()) {
        return Err(OtError::ShapeMismatch(format!(
            "cost is {}x{} but marginals have lengths {} and {}",
            cost.rows(),
            cost.cols(),
            a.len(),
            b.len()
        )));
    }
    check_cost(cost)?;
    check_marginal(a, Side::Source)?;
    check_marginal(b, Side::Target)
}

fn check_cost(cost: &DenseMatrix) -> Result<()> {
    for i in 0..cost.rows() {
        for (j, &value) in cost.row(i).iter().enumerate() {
            if !value.is_finite() || value < 0.0 {
                return Err(OtError::InvalidCost {
                    row: i,
                    col: j,
                    value,
                });
            }
        }
    }
    Ok(())
}

fn check_marginal(v: &[f64], side: Side) -> Result<()> {
    if let Some((index, &value)) = v
        .iter()
        .enumerate()
        .find(|(_, x)| !(**x > 0.0) || !x.is_finite())
    {
        return Err(OtError::MarginalNotPositive { side, index, value });
    }
    let sum: f64 = v.iter().sum();
    if (sum - 1.0).abs() > MARGINAL_SUM_TOL {
        return Err(OtError::MarginalNotNormalized { side, sum });
    }
    Ok(())
}

/// Divides the cost by its largest entry. An all-zero cost is returned unchanged.
pub fn normalize_cost(raw: &DenseMatrix) -> Result<DenseMatrix> {
    if raw.rows() == 0 || raw.cols() == 0 {
        return Err(OtError::ShapeMismatch("empty cost matrix".into()));
    }
    check_cost(raw)?;
    let max = raw.max();
    if max == 0.0 {
        return Ok(raw.clone());
    }
    Ok(raw.map(|c| c / max))
}

/// Explicit rescaling of a positive vector to unit sum.
pub fn renormalize(v: &[f64]) -> Vec<f64> {
    let s: f64 = v.iter().sum();
    v.iter().map(|x| x / s).collect()
}

/// Which scale multiplies `mu_k` in the inexact inner stopping test.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InnerScale {
    /// `min(m, n) * mu_k`
    MinDim,
    /// plain `mu_k`
    One,
}

impl InnerScale {
    pub fn factor(self, m: usize, n: usize) -> f64 {
        match self {
            InnerScale::MinDim => m.min(n) as f64,
            InnerScale::One => 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    pub eta: f64,
    pub mu0: f64,
    pub mu_floor: f64,
    pub inner_scale: InnerScale,
    /// Dual gradient norm at which the Sinkhorn warm start hands over to Newton.
    pub warm_tol: f64,
    pub kkt_tol: f64,
    pub max_outer: usize,
    pub max_inner: usize,
    pub cg_rel_tol: f64,
    /// `None` means `2 n`.
    pub cg_max_iters: Option<usize>,
    pub armijo_sigma: f64,
    pub armijo_beta: f64,
    pub seed: u64,
    /// Sweep cap for every Sinkhorn loop (warm start, IBSink inner, plain Sinkhorn).
    pub max_sweeps: usize,
    /// Re-center gamma every this many Newton steps; off when `None`.
    pub recenter_every: Option<usize>,
    /// Record a trajectory row after every inner iteration as well.
    pub log_inner: bool,
    /// Keep a copy of every inner iterate in the inner reports.
    pub record_iterates: bool,
    /// Wall-clock budget in seconds, checked between iterations.
    pub time_budget: Option<f64>,
    /// Known optimal objective; fills the trajectory gap column.
    pub reference_objective: Option<f64>,
    /// Record zero wall time so trajectories are byte-reproducible.
    pub frozen_clock: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            eta: 1e-4,
            mu0: 1e-4,
            mu_floor: 1e-11,
            inner_scale: InnerScale::MinDim,
            warm_tol: 1e-3,
            kkt_tol: 1e-11,
            max_outer: 300,
            max_inner: 1000,
            cg_rel_tol: 1e-10,
            cg_max_iters: None,
            armijo_sigma: 1e-4,
            armijo_beta: 0.8,
            seed: 0,
            max_sweeps: 100_000,
            recenter_every: None,
            log_inner: false,
            record_iterates: false,
            time_budget: None,
            reference_objective: None,
            frozen_clock: false,
        }
    }
}

impl SolverConfig {
    pub fn with_eta(eta: f64) -> Self {
        Self {
            eta,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("eta", self.eta),
            ("mu0", self.mu0),
            ("mu_floor", self.mu_floor),
            ("warm_tol", self.warm_tol),
            ("kkt_tol", self.kkt_tol),
            ("cg_rel_tol", self.cg_rel_tol),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(OtError::InvalidConfig(format!(
                    "{name} must be positive, got {v}"
                )));
            }
        }
        for (name, v) in [
            ("armijo_sigma", self.armijo_sigma),
            ("armijo_beta", self.armijo_beta),
        ] {
            if !(v > 0.0 && v < 1.0) {
                return Err(OtError::InvalidConfig(format!(
                    "{name} must lie in (0, 1), got {v}"
                )));
            }
        }
        if self.recenter_every == Some(0) {
            return Err(OtError::InvalidConfig(
                "recenter_every must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn cg_max_iters_for(&self, n: usize) -> usize {
        self.cg_max_iters.unwrap_or(2 * n).max(1)
    }
}

/// Log-domain storage of a plan `X^k`, entries clamped at [`LOG_FLOOR`].
#[derive(Debug, Clone, PartialEq)]
pub struct LogPlan {
    log: DenseMatrix,
}

impl LogPlan {
    /// Wraps log entries, clamping anything below the floor (including `-inf`).
    pub fn from_log_entries(mut log: DenseMatrix) -> Result<Self> {
        for x in log.as_mut_slice() {
            if x.is_nan() || *x == f64::INFINITY {
                return Err(OtError::NumericalFailure(
                    "log plan entry is NaN or +inf".into(),
                ));
            }
            if *x < LOG_FLOOR {
                *x = LOG_FLOOR;
            }
        }
        Ok(Self { log })
    }

    /// The all-ones plan (`log = 0`), whose subproblem cost is exactly `C`.
    pub fn ones(m: usize, n: usize) -> Self {
        Self {
            log: DenseMatrix::zeros(m, n),
        }
    }

    pub fn log_entries(&self) -> &DenseMatrix {
        &self.log
    }

    pub fn shape(&self) -> (usize, usize) {
        self.log.shape()
    }

    pub fn to_linear(&self) -> DenseMatrix {
        self.log.map(f64::exp)
    }

    pub fn total_mass(&self) -> f64 {
        self.log.as_slice().iter().map(|x| x.exp()).sum()
    }
}

/// The product coupling `a b^T` in log form.
pub fn initial_plan(problem: &OtProblem) -> LogPlan {
    let la: Vec<f64> = problem.source().iter().map(|x| x.ln()).collect();
    let lb: Vec<f64> = problem.target().iter().map(|x| x.ln()).collect();
    let log = DenseMatrix::from_fn(problem.m(), problem.n(), |i, j| la[i] + lb[j]);
    LogPlan { log }
}
