//! Sparsified Newton iterations on the semi-dual of one proximal subproblem.

use crate::error::{OtError, Result};
use crate::feasibility::{bregman_div, round_to_feasible};
use crate::krylov::cg_solve;
use crate::matrix::{dot, norm2};
use crate::problem::{LogPlan, OtProblem, SolverConfig};
use crate::semidual::{
    compute_p, next_plan, recenter, semidual_gradient, semidual_value, value_change, DualState,
    RowSoftmaxCache,
};
use crate::sparsify::{choose_anchor, sparsify_p, threshold_rho, SparseHessianOp};

/// Backtracking trials allowed per Newton step.
pub const MAX_LINE_SEARCH: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InnerStop {
    /// `‖g‖ < μ` and `D(P_Ω(X), X) ≤ scale·μ`.
    InexactCriterion,
    /// Gradient norm target reached.
    GradFloor,
    MaxInner,
}

/// When the inner loop may stop.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InnerCriterion {
    /// Pre-check `‖g‖ < mu`, then `D(P_Ω(X), X) ≤ scale·mu`.
    Inexact { mu: f64, scale: f64 },
    /// `‖g‖ ≤ tol`.
    GradNorm { tol: f64 },
}

/// One accepted Newton step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepLog {
    pub grad_norm: f64,
    pub rho: f64,
    pub cg_iters: usize,
    pub step: f64,
    pub g_dot_d: f64,
    pub value_before: f64,
    pub value_after: f64,
    /// `L(γ) − L(γ + tΔ)`.
    pub decrease: f64,
    /// `1ᵀγ` and `‖γ‖` of the new iterate.
    pub gamma_sum: f64,
    pub gamma_norm: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InnerReport {
    pub newton_iters: usize,
    pub cg_iters_total: usize,
    pub final_grad_norm: f64,
    pub stop_reason: InnerStop,
    pub step_sizes: Vec<f64>,
    pub steps: Vec<StepLog>,
    /// Every iterate, including the initial one, when requested in the config.
    pub iterates: Vec<Vec<f64>>,
}

/// Newton step output together with the softmax cache at the new point.
#[derive(Debug, Clone)]
pub struct NewtonStep {
    pub gamma: DualState,
    pub step: f64,
    pub cg_iters: usize,
    pub cache: RowSoftmaxCache,
    pub log: StepLog,
}

/// State handed to the per-iteration observer of [`inner_solve_observed`].
pub struct InnerProgress<'a> {
    pub iteration: usize,
    pub gamma: &'a [f64],
    pub cache: &'a RowSoftmaxCache,
    pub grad_norm: f64,
    pub cg_iters_total: usize,
}

/// One shifted sparsified Newton step with Armijo backtracking.
///
/// `cache` must hold `P(γ)` for the given `gamma`.
pub fn newton_step(
    plan: &LogPlan,
    gamma: &DualState,
    cache: &RowSoftmaxCache,
    problem: &OtProblem,
    config: &SolverConfig,
) -> Result<NewtonStep> {
    let eta = config.eta;
    let (m, n) = (problem.m(), problem.n());
    let g = semidual_gradient(cache, problem);
    let grad_norm = norm2(&g);
    let value = semidual_value(cache, &gamma.gamma, problem, eta);
    if grad_norm == 0.0 {
        let log = StepLog {
            grad_norm,
            rho: 0.0,
            cg_iters: 0,
            step: 1.0,
            g_dot_d: 0.0,
            value_before: value,
            value_after: value,
            decrease: 0.0,
            gamma_sum: gamma.sum(),
            gamma_norm: norm2(&gamma.gamma),
        };
        return Ok(NewtonStep {
            gamma: gamma.clone(),
            step: 1.0,
            cg_iters: 0,
            cache: cache.clone(),
            log,
        });
    }

    let rho = threshold_rho(eta, m, n, grad_norm);
    let p_rho = sparsify_p(cache, rho, choose_anchor(problem.source()));
    let op = SparseHessianOp::new(p_rho, problem.source(), eta);
    // The exact gradient sums to Σa − Σb = 0; drop the rounding residue so the
    // direction stays in the zero-sum subspace.
    let mut centered = g.clone();
    recenter(&mut centered);
    let rhs: Vec<f64> = centered.iter().map(|x| -x).collect();
    let cg = cg_solve(
        &op,
        grad_norm,
        &rhs,
        config.cg_rel_tol,
        config.cg_max_iters_for(n),
    )?;
    let mut dir = cg.solution;
    recenter(&mut dir);
    let mut gd = dot(&g, &dir);
    if !(gd < 0.0) {
        dir = rhs;
        gd = dot(&g, &dir);
    }

    let mut t = 1.0;
    for _ in 0..MAX_LINE_SEARCH {
        let trial: Vec<f64> = gamma
            .gamma
            .iter()
            .zip(&dir)
            .map(|(x, d)| x + t * d)
            .collect();
        let accepted = match value_change(cache, &g, &dir, t, problem, eta) {
            Some(dl) if dl <= config.armijo_sigma * t * gd => {
                let new_cache = compute_p(plan, &trial, problem, eta)?;
                Some((dl, new_cache))
            }
            Some(_) => None,
            None => match compute_p(plan, &trial, problem, eta) {
                Ok(new_cache) => {
                    let dl = semidual_value(&new_cache, &trial, problem, eta) - value;
                    (dl <= config.armijo_sigma * t * gd).then_some((dl, new_cache))
                }
                Err(OtError::NumericalOverflow(_)) => None,
                Err(e) => return Err(e),
            },
        };
        if let Some((dl, new_cache)) = accepted {
            let new_gamma = DualState {
                gamma: trial,
                generation: gamma.generation,
            };
            let log = StepLog {
                grad_norm,
                rho,
                cg_iters: cg.iters,
                step: t,
                g_dot_d: gd,
                value_before: value,
                value_after: value + dl,
                decrease: -dl,
                gamma_sum: new_gamma.sum(),
                gamma_norm: norm2(&new_gamma.gamma),
            };
            return Ok(NewtonStep {
                gamma: new_gamma,
                step: t,
                cg_iters: cg.iters,
                cache: new_cache,
                log,
            });
        }
        t *= config.armijo_beta;
    }
    Err(OtError::LineSearchStalled(MAX_LINE_SEARCH))
}

/// Result of [`inner_solve`].
#[derive(Debug, Clone)]
pub struct InnerOutcome {
    pub gamma: DualState,
    /// `log(diag(a) P(γ))`, the next outer iterate.
    pub plan: LogPlan,
    pub cache: RowSoftmaxCache,
    pub report: InnerReport,
}

/// Newton iterations on the subproblem at `plan` until the inexact test with
/// tolerance `mu_k` holds or `max_inner` steps are taken.
pub fn inner_solve(
    plan: &LogPlan,
    gamma0: &DualState,
    problem: &OtProblem,
    config: &SolverConfig,
    mu_k: f64,
) -> Result<InnerOutcome> {
    let scale = config.inner_scale.factor(problem.m(), problem.n());
    inner_solve_observed(
        plan,
        gamma0,
        problem,
        config,
        InnerCriterion::Inexact { mu: mu_k, scale },
        |_| {},
    )
}

/// [`inner_solve`] with an explicit stopping rule and a callback after every step.
pub fn inner_solve_observed<F>(
    plan: &LogPlan,
    gamma0: &DualState,
    problem: &OtProblem,
    config: &SolverConfig,
    criterion: InnerCriterion,
    mut observe: F,
) -> Result<InnerOutcome>
where
    F: FnMut(&InnerProgress<'_>),
{
    let eta = config.eta;
    let mut gamma = gamma0.clone();
    let mut cache = compute_p(plan, &gamma.gamma, problem, eta)?;
    let mut report = InnerReport {
        newton_iters: 0,
        cg_iters_total: 0,
        final_grad_norm: norm2(&semidual_gradient(&cache, problem)),
        stop_reason: InnerStop::MaxInner,
        step_sizes: Vec::new(),
        steps: Vec::new(),
        iterates: Vec::new(),
    };
    if config.record_iterates {
        report.iterates.push(gamma.gamma.clone());
    }

    while report.newton_iters < config.max_inner {
        let step = newton_step(plan, &gamma, &cache, problem, config)?;
        gamma = step.gamma;
        cache = step.cache;
        report.newton_iters += 1;
        report.cg_iters_total += step.cg_iters;
        report.step_sizes.push(step.step);
        report.steps.push(step.log);
        if let Some(every) = config.recenter_every {
            if report.newton_iters.is_multiple_of(every) {
                gamma.recenter();
            }
        }
        if config.record_iterates {
            report.iterates.push(gamma.gamma.clone());
        }
        let grad_norm = norm2(&semidual_gradient(&cache, problem));
        report.final_grad_norm = grad_norm;
        observe(&InnerProgress {
            iteration: report.newton_iters,
            gamma: &gamma.gamma,
            cache: &cache,
            grad_norm,
            cg_iters_total: report.cg_iters_total,
        });

        match criterion {
            InnerCriterion::GradNorm { tol } => {
                if grad_norm <= tol {
                    report.stop_reason = InnerStop::GradFloor;
                    break;
                }
            }
            InnerCriterion::Inexact { mu, scale } => {
                if grad_norm < mu
                    && inexact_test(plan, &gamma.gamma, &cache, problem, eta, scale * mu)?
                {
                    report.stop_reason = InnerStop::InexactCriterion;
                    break;
                }
            }
        }
    }
    let next = next_plan(plan, &gamma.gamma, &cache, problem, eta)?;
    Ok(InnerOutcome {
        gamma,
        plan: next,
        cache,
        report,
    })
}

/// `D(P_Ω(X), X) ≤ tol` for `X = diag(a) P(γ)`.
fn inexact_test(
    plan: &LogPlan,
    gamma: &[f64],
    cache: &RowSoftmaxCache,
    problem: &OtProblem,
    eta: f64,
    tol: f64,
) -> Result<bool> {
    let x = next_plan(plan, gamma, cache, problem, eta)?;
    let rounded = round_to_feasible(&x.to_linear(), problem.source(), problem.target());
    Ok(bregman_div(rounded.entries(), &x) <= tol)
}
