//! Log-domain alternating minimization of the two-dual objective
//! `Z(γ, ζ) = η Σ X_ij exp((ζ_i + γ_j − C_ij)/η) − aᵀζ − bᵀγ`.
//!
//! After a ζ-update the rows of `χ_ij = X_ij exp((ζ_i + γ_j − C_ij)/η)` sum
//! to `a` exactly; after a γ-update its columns sum to `b`.

use crate::error::{OtError, Result};
use crate::matrix::{dot, DenseMatrix};
use crate::par;
use crate::problem::{initial_plan, LogPlan, OtProblem};
use crate::semidual::recenter;

#[derive(Debug, Clone, PartialEq)]
pub struct TwoDualState {
    pub gamma: Vec<f64>,
    pub zeta: Vec<f64>,
}

impl TwoDualState {
    pub fn zeros(m: usize, n: usize) -> Self {
        Self {
            gamma: vec![0.0; n],
            zeta: vec![0.0; m],
        }
    }
}

/// `log Σ_j X_ij exp((γ_j − C_ij)/η)` for every row.
pub(crate) fn row_lse(plan: &LogPlan, gamma: &[f64], problem: &OtProblem, eta: f64) -> Vec<f64> {
    let (logx, cost) = (plan.log_entries(), problem.cost());
    let inv_eta = 1.0 / eta;
    par::map_indices(problem.m(), problem.n(), |i| {
        let (lx, c) = (logx.row(i), cost.row(i));
        let mut max = f64::NEG_INFINITY;
        for j in 0..lx.len() {
            max = max.max(lx[j] + (gamma[j] - c[j]) * inv_eta);
        }
        let s: f64 = (0..lx.len())
            .map(|j| (lx[j] + (gamma[j] - c[j]) * inv_eta - max).exp())
            .sum();
        max + s.ln()
    })
}

/// `log Σ_i X_ij exp((ζ_i − C_ij)/η)` for every column, via two row-major passes.
pub(crate) fn col_lse(plan: &LogPlan, zeta: &[f64], problem: &OtProblem, eta: f64) -> Vec<f64> {
    let (logx, cost) = (plan.log_entries(), problem.cost());
    let (m, n) = (problem.m(), problem.n());
    let inv_eta = 1.0 / eta;
    let value = |i: usize, j: usize| logx.get(i, j) + (zeta[i] - cost.get(i, j)) * inv_eta;
    let mut max = vec![f64::NEG_INFINITY; n];
    for i in 0..m {
        for (j, mj) in max.iter_mut().enumerate() {
            *mj = mj.max(value(i, j));
        }
    }
    let sums = par::accumulate_rows(m, n, n, |i, acc| {
        for j in 0..n {
            acc[j] += (value(i, j) - max[j]).exp();
        }
    });
    max.iter().zip(&sums).map(|(mx, s)| mx + s.ln()).collect()
}

/// Exact minimization over ζ: `ζ_i = η log a_i − η log Σ_j X_ij exp((γ_j − C_ij)/η)`.
pub fn zeta_update(
    plan: &LogPlan,
    state: &TwoDualState,
    problem: &OtProblem,
    eta: f64,
) -> TwoDualState {
    let lse = row_lse(plan, &state.gamma, problem, eta);
    let zeta = problem
        .source()
        .iter()
        .zip(&lse)
        .map(|(a, l)| eta * a.ln() - eta * l)
        .collect();
    TwoDualState {
        gamma: state.gamma.clone(),
        zeta,
    }
}

/// Exact minimization over γ: `γ_j = η log b_j − η log Σ_i X_ij exp((ζ_i − C_ij)/η)`.
pub fn gamma_update(
    plan: &LogPlan,
    state: &TwoDualState,
    problem: &OtProblem,
    eta: f64,
) -> TwoDualState {
    let lse = col_lse(plan, &state.zeta, problem, eta);
    let gamma = gamma_from_col_lse(&lse, problem, eta);
    TwoDualState {
        gamma,
        zeta: state.zeta.clone(),
    }
}

pub(crate) fn gamma_from_col_lse(lse: &[f64], problem: &OtProblem, eta: f64) -> Vec<f64> {
    problem
        .target()
        .iter()
        .zip(lse)
        .map(|(b, l)| eta * b.ln() - eta * l)
        .collect()
}

/// Column sums of `χ` given the column log-normalizers of the current ζ.
fn col_sums_from_lse(lse: &[f64], gamma: &[f64], eta: f64) -> Vec<f64> {
    lse.iter()
        .zip(gamma)
        .map(|(l, g)| (l + g / eta).exp())
        .collect()
}

fn l2_error(v: &[f64], target: &[f64]) -> f64 {
    v.iter()
        .zip(target)
        .map(|(x, t)| (x - t).powi(2))
        .sum::<f64>()
        .sqrt()
}

/// Log of `χ(ζ, γ)`.
pub fn chi_log(
    plan: &LogPlan,
    state: &TwoDualState,
    problem: &OtProblem,
    eta: f64,
) -> Result<LogPlan> {
    let (logx, cost) = (plan.log_entries(), problem.cost());
    let inv_eta = 1.0 / eta;
    let mut out = DenseMatrix::zeros(problem.m(), problem.n());
    par::for_each_row(out.as_mut_slice(), problem.n(), |i, row| {
        for (j, v) in row.iter_mut().enumerate() {
            *v = logx.get(i, j) + (state.zeta[i] + state.gamma[j] - cost.get(i, j)) * inv_eta;
        }
    });
    LogPlan::from_log_entries(out)
}

/// Row and column sums of `χ(ζ, γ)`.
pub fn chi_marginals(
    plan: &LogPlan,
    state: &TwoDualState,
    problem: &OtProblem,
    eta: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let chi = chi_log(plan, state, problem, eta)?.to_linear();
    Ok((chi.row_sums(), chi.col_sums()))
}

/// `Z(γ, ζ)`.
pub fn two_dual_value(
    plan: &LogPlan,
    state: &TwoDualState,
    problem: &OtProblem,
    eta: f64,
) -> Result<f64> {
    let chi = chi_log(plan, state, problem, eta)?.to_linear();
    let mass: f64 = chi.as_slice().iter().sum();
    Ok(eta * mass - dot(problem.source(), &state.zeta) - dot(problem.target(), &state.gamma))
}

/// Result of the Sinkhorn warm start of one subproblem.
#[derive(Debug, Clone)]
pub struct WarmStart {
    /// Zero-sum γ handed to the Newton phase.
    pub gamma: Vec<f64>,
    pub zeta: Vec<f64>,
    pub sweeps: usize,
    pub marginal_error: f64,
}

/// Alternates ζ/γ updates from `init` until `‖χᵀ1 − b‖ < warm_tol`, measured
/// right after a ζ-update, then re-centers γ (ζ absorbs the shift so χ is unchanged).
pub fn warm_start(
    plan: &LogPlan,
    init: &TwoDualState,
    problem: &OtProblem,
    eta: f64,
    warm_tol: f64,
    max_sweeps: usize,
) -> Result<WarmStart> {
    let mut gamma = init.gamma.clone();
    let mut sweeps = 0;
    loop {
        let state = zeta_update(
            plan,
            &TwoDualState {
                gamma,
                zeta: init.zeta.clone(),
            },
            problem,
            eta,
        );
        sweeps += 1;
        let lse = col_lse(plan, &state.zeta, problem, eta);
        let err = l2_error(
            &col_sums_from_lse(&lse, &state.gamma, eta),
            problem.target(),
        );
        if !err.is_finite() {
            return Err(OtError::NumericalOverflow("warm_start"));
        }
        if err < warm_tol {
            let TwoDualState {
                mut gamma,
                mut zeta,
            } = state;
            let mean = recenter(&mut gamma);
            zeta.iter_mut().for_each(|z| *z += mean);
            return Ok(WarmStart {
                gamma,
                zeta,
                sweeps,
                marginal_error: err,
            });
        }
        if sweeps >= max_sweeps {
            return Err(OtError::WarmStartStalled(max_sweeps));
        }
        gamma = gamma_from_col_lse(&lse, problem, eta);
    }
}

/// Standalone entropic OT solve by Sinkhorn, reference plan `a bᵀ`.
#[derive(Debug, Clone)]
pub struct EotSolution {
    /// `log χ` after the final ζ-update.
    pub plan: LogPlan,
    pub state: TwoDualState,
    pub iters: usize,
    pub converged: bool,
    /// Column marginal error after each ζ-update.
    pub errors: Vec<f64>,
}

pub fn sinkhorn_solve_eot(
    problem: &OtProblem,
    eta: f64,
    tol: f64,
    max_iters: usize,
) -> Result<EotSolution> {
    let reference = initial_plan(problem);
    let mut state = TwoDualState::zeros(problem.m(), problem.n());
    let mut errors = Vec::new();
    let mut converged = false;
    let mut iters = 0;
    while iters < max_iters.max(1) {
        state = zeta_update(&reference, &state, problem, eta);
        iters += 1;
        let lse = col_lse(&reference, &state.zeta, problem, eta);
        let err = l2_error(
            &col_sums_from_lse(&lse, &state.gamma, eta),
            problem.target(),
        );
        errors.push(err);
        if err < tol {
            converged = true;
            break;
        }
        if iters < max_iters {
            state.gamma = gamma_from_col_lse(&lse, problem, eta);
        }
    }
    let plan = chi_log(&reference, &state, problem, eta)?;
    Ok(EotSolution {
        plan,
        state,
        iters,
        converged,
        errors,
    })
}

/// ζ-update followed by the column log-normalizers of the result and its
/// column marginal error; [`gamma_from_col_lse`] completes the sweep.
pub(crate) fn zeta_half(
    plan: &LogPlan,
    state: &TwoDualState,
    problem: &OtProblem,
    eta: f64,
) -> (TwoDualState, Vec<f64>, f64) {
    let s = zeta_update(plan, state, problem, eta);
    let lse = col_lse(plan, &s.zeta, problem, eta);
    let err = l2_error(&col_sums_from_lse(&lse, &s.gamma, eta), problem.target());
    (s, lse, err)
}

/// `‖χ 1 − a‖_∞` and `‖χᵀ 1 − b‖_∞`.
pub fn marginal_errors_inf(
    plan: &LogPlan,
    state: &TwoDualState,
    problem: &OtProblem,
    eta: f64,
) -> Result<(f64, f64)> {
    let (r, c) = chi_marginals(plan, state, problem, eta)?;
    let e = |v: &[f64], t: &[f64]| {
        v.iter()
            .zip(t)
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max)
    };
    Ok((e(&r, problem.source()), e(&c, problem.target())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::gen_uniform;

    #[test]
    fn zero_cost_self_consistent_start() {
        let p = OtProblem::new(
            DenseMatrix::zeros(3, 2),
            vec![0.2, 0.3, 0.5],
            vec![0.4, 0.6],
        )
        .unwrap();
        let plan = initial_plan(&p);
        let s = zeta_update(&plan, &TwoDualState::zeros(3, 2), &p, 0.1);
        assert!(s.zeta.iter().all(|z| z.abs() < 1e-15));
        let s = gamma_update(&plan, &TwoDualState::zeros(3, 2), &p, 0.1);
        assert!(s.gamma.iter().all(|g| g.abs() < 1e-15));
    }

    #[test]
    fn hand_instance_scalar_oracle() {
        // X = a bᵀ, a = b = (1/2, 1/2), C = [[0,1],[1,0]], γ = (0.1, 0), η = 1
        let c = DenseMatrix::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        let p = OtProblem::new(c, vec![0.5, 0.5], vec![0.5, 0.5]).unwrap();
        let plan = initial_plan(&p);
        let st = TwoDualState {
            gamma: vec![0.1, 0.0],
            zeta: vec![0.0, 0.0],
        };
        let z = zeta_update(&plan, &st, &p, 1.0);
        let z0 = 0.5f64.ln() - (0.25 * (0.1f64).exp() + 0.25 * (-1.0f64).exp()).ln();
        let z1 = 0.5f64.ln() - (0.25 * (0.1f64 - 1.0).exp() + 0.25).ln();
        assert!((z.zeta[0] - z0).abs() < 1e-15 && (z.zeta[1] - z1).abs() < 1e-15);
        let g = gamma_update(
            &plan,
            &TwoDualState {
                gamma: vec![0.0; 2],
                zeta: vec![0.1, 0.0],
            },
            &p,
            1.0,
        );
        let g0 = 0.5f64.ln() - (0.25 * (0.1f64).exp() + 0.25 * (-1.0f64).exp()).ln();
        assert!((g.gamma[0] - g0).abs() < 1e-15);
    }

    #[test]
    fn updates_give_exact_marginals_and_do_not_increase_z() {
        let p = gen_uniform(12, 9, 4);
        let plan = initial_plan(&p);
        let eta = 1e-2;
        let mut st = TwoDualState::zeros(12, 9);
        let mut z_prev = two_dual_value(&plan, &st, &p, eta).unwrap();
        for _ in 0..5 {
            st = zeta_update(&plan, &st, &p, eta);
            assert!(marginal_errors_inf(&plan, &st, &p, eta).unwrap().0 <= 1e-12);
            st = gamma_update(&plan, &st, &p, eta);
            assert!(marginal_errors_inf(&plan, &st, &p, eta).unwrap().1 <= 1e-12);
            let z = two_dual_value(&plan, &st, &p, eta).unwrap();
            assert!(z <= z_prev + 1e-10);
            z_prev = z;
        }
    }

    #[test]
    fn warm_start_examples() {
        let p = gen_uniform(16, 16, 2);
        let plan = initial_plan(&p);
        let w = warm_start(&plan, &TwoDualState::zeros(16, 16), &p, 1e-2, 10.0, 100).unwrap();
        assert_eq!(w.sweeps, 1);
        let w = warm_start(&plan, &TwoDualState::zeros(16, 16), &p, 1e-2, 1e-3, 100_000).unwrap();
        assert!(w.gamma.iter().sum::<f64>().abs() <= 1e-12);
        assert!(w.marginal_error < 1e-3);
        let st = TwoDualState {
            gamma: w.gamma.clone(),
            zeta: w.zeta.clone(),
        };
        let (_, col) = marginal_errors_inf(&plan, &st, &p, 1e-2).unwrap();
        assert!(col < 1e-3);
    }

    #[test]
    fn warm_start_cap_is_an_error() {
        let p = gen_uniform(8, 8, 5);
        let plan = initial_plan(&p);
        let err = warm_start(&plan, &TwoDualState::zeros(8, 8), &p, 1e-3, 1e-14, 3).unwrap_err();
        assert!(matches!(err, OtError::WarmStartStalled(3)));
    }

    #[test]
    fn constant_cost_converges_in_one_sweep() {
        let p = OtProblem::new(
            DenseMatrix::filled(4, 3, 1.0),
            crate::problem::renormalize(&[1.0, 2.0, 3.0, 4.0]),
            vec![0.2, 0.3, 0.5],
        )
        .unwrap();
        let sol = sinkhorn_solve_eot(&p, 1e-2, 1e-12, 10).unwrap();
        assert_eq!(sol.iters, 1);
        let x = sol.plan.to_linear();
        for i in 0..4 {
            for j in 0..3 {
                assert!((x.get(i, j) - p.source()[i] * p.target()[j]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn large_eta_is_close_to_product() {
        let p = gen_uniform(8, 8, 1);
        let sol = sinkhorn_solve_eot(&p, 10.0, 1e-12, 1000).unwrap();
        assert!(sol.converged);
        let x = sol.plan.to_linear();
        let dev = (0..8)
            .flat_map(|i| (0..8).map(move |j| (i, j)))
            .map(|(i, j)| (x.get(i, j) - p.source()[i] * p.target()[j]).abs())
            .fold(0.0, f64::max);
        assert!(dev < 0.01);
    }

    #[test]
    fn marginal_errors_decrease_after_first_sweep() {
        let p = gen_uniform(10, 10, 7);
        let sol = sinkhorn_solve_eot(&p, 5e-2, 1e-12, 500).unwrap();
        for w in sol.errors[1..].windows(2) {
            assert!(w[1] <= w[0] * (1.0 + 1e-9) + 1e-15, "{w:?}");
        }
    }
}
