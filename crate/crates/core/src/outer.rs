//! Outer Bregman proximal point drivers.

use crate::error::{OtError, Result};
use crate::feasibility::{bregman_div, kkt_residual, round_to_feasible, FeasiblePlan, KktReport};
use crate::inner::{inner_solve_observed, InnerCriterion, InnerProgress, InnerReport, InnerStop};
use crate::problem::{initial_plan, LogPlan, OtProblem, SolverConfig};
use crate::semidual::{next_plan, DualState};
use crate::sinkhorn::{chi_log, gamma_from_col_lse, warm_start, zeta_half, TwoDualState};
use crate::trajectory::{Record, SolveClock, Trajectory};

/// Sweeps between trajectory records of the plain Sinkhorn baseline.
pub const SINKHORN_RECORD_EVERY: usize = 10;

/// `μ_k = max(mu0 / (k + 1)², floor)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MuSchedule {
    pub mu0: f64,
    pub floor: f64,
}

impl MuSchedule {
    pub fn from_config(config: &SolverConfig) -> Self {
        Self {
            mu0: config.mu0,
            floor: config.mu_floor,
        }
    }

    pub fn mu(&self, k: usize) -> f64 {
        let d = (k as f64 + 1.0) * (k as f64 + 1.0);
        (self.mu0 / d).max(self.floor)
    }
}

impl Default for MuSchedule {
    fn default() -> Self {
        Self::from_config(&SolverConfig::default())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OuterStop {
    Converged,
    IterationCap,
    TimeBudget,
}

#[derive(Debug, Clone)]
pub struct OuterResult {
    pub final_logplan: LogPlan,
    pub rounded_plan: FeasiblePlan,
    pub objective: f64,
    pub kkt: KktReport,
    pub outer_iters: usize,
    pub trajectory: Trajectory,
    /// Dual iterate paired with the final plan.
    pub gamma: Vec<f64>,
    pub stop: OuterStop,
    /// Newton steps (IBSN) or Sinkhorn sweeps (IBSink, plain Sinkhorn).
    pub inner_total: usize,
    pub cg_total: usize,
    /// Sweeps spent in Sinkhorn warm starts.
    pub warm_sweeps: usize,
    pub inner_reports: Vec<InnerReport>,
    pub wall_seconds: f64,
}

impl OuterResult {
    pub fn converged(&self) -> bool {
        self.stop == OuterStop::Converged
    }
}

/// Rounded plan, objective and KKT residual of a candidate iterate.
struct Evaluation {
    rounded: FeasiblePlan,
    objective: f64,
    kkt: KktReport,
}

fn evaluate(plan: &LogPlan, gamma: &[f64], problem: &OtProblem) -> Result<Evaluation> {
    let rounded = round_to_feasible(&plan.to_linear(), problem.source(), problem.target());
    let objective = rounded.objective(problem.cost());
    if !objective.is_finite() {
        return Err(OtError::NumericalFailure(format!(
            "objective is {objective}"
        )));
    }
    let kkt = kkt_residual(
        rounded.entries(),
        gamma,
        problem.cost(),
        problem.source(),
        problem.target(),
    );
    Ok(Evaluation {
        rounded,
        objective,
        kkt,
    })
}

struct Recorder<'a> {
    config: &'a SolverConfig,
    clock: SolveClock,
    trajectory: Trajectory,
}

impl<'a> Recorder<'a> {
    fn new(config: &'a SolverConfig) -> Self {
        Self {
            config,
            clock: SolveClock::start(config.frozen_clock),
            trajectory: Trajectory::new(),
        }
    }

    fn push(
        &mut self,
        outer_k: usize,
        inner_total: usize,
        cg_total: usize,
        ev: &Evaluation,
        grad_norm: f64,
    ) -> Result<()> {
        self.trajectory.record(Record {
            outer_k,
            inner_total,
            cg_total,
            wall_seconds: self.clock.seconds(),
            objective: ev.objective,
            kkt: ev.kkt.delta_kkt,
            grad_norm,
            gap: self
                .config
                .reference_objective
                .map(|f| (ev.objective - f).abs()),
        })
    }

    fn over_budget(&self) -> bool {
        self.config
            .time_budget
            .is_some_and(|b| self.clock.elapsed() >= b)
    }
}

/// Inexact Bregman proximal point with sparsified Newton inner solves.
pub fn ibsn_solve(problem: &OtProblem, config: &SolverConfig) -> Result<OuterResult> {
    config.validate()?;
    let eta = config.eta;
    let schedule = MuSchedule::from_config(config);
    let scale = config.inner_scale.factor(problem.m(), problem.n());
    let mut rec = Recorder::new(config);
    let mut plan = initial_plan(problem);
    let mut state = TwoDualState::zeros(problem.m(), problem.n());
    let (mut inner_total, mut cg_total, mut warm_sweeps) = (0, 0, 0);
    let mut reports = Vec::new();
    let mut last = None;
    let mut stop = OuterStop::IterationCap;

    for k in 0..config.max_outer {
        if k > 0 && rec.over_budget() {
            stop = OuterStop::TimeBudget;
            break;
        }
        let ws = warm_start(
            &plan,
            &state,
            problem,
            eta,
            config.warm_tol,
            config.max_sweeps,
        )?;
        warm_sweeps += ws.sweeps;
        let gamma0 = DualState {
            gamma: ws.gamma,
            generation: k,
        };
        let criterion = InnerCriterion::Inexact {
            mu: schedule.mu(k),
            scale,
        };
        let mut inner_err = None;
        let out = {
            let rec_ref = &mut rec;
            let plan_ref = &plan;
            inner_solve_observed(
                plan_ref,
                &gamma0,
                problem,
                config,
                criterion,
                |p: &InnerProgress<'_>| {
                    if !config.log_inner || inner_err.is_some() {
                        return;
                    }
                    let logged = next_plan(plan_ref, p.gamma, p.cache, problem, eta)
                        .and_then(|x| evaluate(&x, p.gamma, problem))
                        .and_then(|ev| {
                            rec_ref.push(
                                k,
                                inner_total + p.iteration,
                                cg_total + p.cg_iters_total,
                                &ev,
                                p.grad_norm,
                            )
                        });
                    if let Err(e) = logged {
                        inner_err = Some(e);
                    }
                },
            )?
        };
        if let Some(e) = inner_err {
            return Err(e);
        }
        inner_total += out.report.newton_iters;
        cg_total += out.report.cg_iters_total;
        let zeta = out.cache.zeta(problem, eta);
        let ev = evaluate(&out.plan, &out.gamma.gamma, problem)?;
        rec.push(
            k + 1,
            inner_total,
            cg_total,
            &ev,
            out.report.final_grad_norm,
        )?;
        reports.push(out.report);
        plan = out.plan;
        state = TwoDualState {
            gamma: out.gamma.gamma,
            zeta,
        };
        let done = ev.kkt.delta_kkt < config.kkt_tol;
        last = Some((ev, k + 1));
        if done {
            stop = OuterStop::Converged;
            break;
        }
    }
    finish(
        problem,
        plan,
        state.gamma,
        last,
        stop,
        rec,
        inner_total,
        cg_total,
        warm_sweeps,
        reports,
    )
}

/// The same outer loop with Sinkhorn sweeps as the inner solver.
///
/// A sweep is a ζ-update followed by a γ-update. The pre-check compares the
/// column marginal error after the ζ-update with `μ_k`; the full test is the
/// divergence test on `χ` at that point, whose row marginals equal `a`.
pub fn ibsink_solve(problem: &OtProblem, config: &SolverConfig) -> Result<OuterResult> {
    config.validate()?;
    let eta = config.eta;
    let schedule = MuSchedule::from_config(config);
    let scale = config.inner_scale.factor(problem.m(), problem.n());
    let mut rec = Recorder::new(config);
    let mut plan = initial_plan(problem);
    let mut state = TwoDualState::zeros(problem.m(), problem.n());
    let mut inner_total = 0;
    let mut last = None;
    let mut stop = OuterStop::IterationCap;

    'outer: for k in 0..config.max_outer {
        if k > 0 && rec.over_budget() {
            stop = OuterStop::TimeBudget;
            break;
        }
        let mu = schedule.mu(k);
        let mut sweeps = 0;
        let (next, err) = loop {
            let (s, lse, err) = zeta_half(&plan, &state, problem, eta);
            sweeps += 1;
            if !err.is_finite() {
                return Err(OtError::NumericalOverflow("ibsink"));
            }
            let capped = sweeps >= config.max_sweeps;
            if err < mu || capped {
                let x = chi_log(&plan, &s, problem, eta)?;
                let rounded = round_to_feasible(&x.to_linear(), problem.source(), problem.target());
                if capped || bregman_div(rounded.entries(), &x) <= scale * mu {
                    state = s;
                    break (x, err);
                }
            }
            if config.log_inner && sweeps % SINKHORN_RECORD_EVERY == 0 {
                let x = chi_log(&plan, &s, problem, eta)?;
                let ev = evaluate(&x, &s.gamma, problem)?;
                rec.push(k, inner_total + sweeps, 0, &ev, err)?;
            }
            state = TwoDualState {
                gamma: gamma_from_col_lse(&lse, problem, eta),
                zeta: s.zeta,
            };
            if sweeps % SINKHORN_RECORD_EVERY == 0 && rec.over_budget() {
                inner_total += sweeps;
                let x = chi_log(&plan, &state, problem, eta)?;
                let ev = evaluate(&x, &state.gamma, problem)?;
                rec.push(k + 1, inner_total, 0, &ev, err)?;
                plan = x;
                last = Some((ev, k + 1));
                stop = OuterStop::TimeBudget;
                break 'outer;
            }
        };
        inner_total += sweeps;
        let ev = evaluate(&next, &state.gamma, problem)?;
        rec.push(k + 1, inner_total, 0, &ev, err)?;
        plan = next;
        let done = ev.kkt.delta_kkt < config.kkt_tol;
        last = Some((ev, k + 1));
        if done {
            stop = OuterStop::Converged;
            break;
        }
    }
    finish(
        problem,
        plan,
        state.gamma,
        last,
        stop,
        rec,
        inner_total,
        0,
        0,
        Vec::new(),
    )
}

/// One entropic subproblem with reference `1 1ᵀ`, solved by warm start plus
/// Newton to `‖g‖ ≤ kkt_tol`.
pub fn eot_single_solve(problem: &OtProblem, config: &SolverConfig) -> Result<OuterResult> {
    config.validate()?;
    let eta = config.eta;
    let mut rec = Recorder::new(config);
    let plan = LogPlan::ones(problem.m(), problem.n());
    let init = TwoDualState::zeros(problem.m(), problem.n());
    let ws = warm_start(
        &plan,
        &init,
        problem,
        eta,
        config.warm_tol,
        config.max_sweeps,
    )?;
    let gamma0 = DualState {
        gamma: ws.gamma,
        generation: 0,
    };
    let out = inner_solve_observed(
        &plan,
        &gamma0,
        problem,
        config,
        InnerCriterion::GradNorm {
            tol: config.kkt_tol,
        },
        |_| {},
    )?;
    let ev = evaluate(&out.plan, &out.gamma.gamma, problem)?;
    let (inner_total, cg_total) = (out.report.newton_iters, out.report.cg_iters_total);
    rec.push(1, inner_total, cg_total, &ev, out.report.final_grad_norm)?;
    let stop = if out.report.stop_reason == InnerStop::GradFloor {
        OuterStop::Converged
    } else {
        OuterStop::IterationCap
    };
    let gamma = out.gamma.gamma.clone();
    finish(
        problem,
        out.plan,
        gamma,
        Some((ev, 1)),
        stop,
        rec,
        inner_total,
        cg_total,
        ws.sweeps,
        vec![out.report],
    )
}

/// Plain log-domain Sinkhorn on the entropic problem with reference `a bᵀ`,
/// recording the LP KKT residual of the rounded plan every
/// [`SINKHORN_RECORD_EVERY`] sweeps.
///
/// Converges when the column marginal error after a ζ-update drops below
/// `kkt_tol`; stops early once the recorded KKT residual does too.
pub fn sinkhorn_baseline(problem: &OtProblem, config: &SolverConfig) -> Result<OuterResult> {
    config.validate()?;
    let eta = config.eta;
    let mut rec = Recorder::new(config);
    let plan = initial_plan(problem);
    let mut state = TwoDualState::zeros(problem.m(), problem.n());
    let mut sweeps = 0;
    let mut stop = OuterStop::IterationCap;
    let last;
    loop {
        let (s, lse, err) = zeta_half(&plan, &state, problem, eta);
        sweeps += 1;
        if !err.is_finite() {
            return Err(OtError::NumericalOverflow("sinkhorn"));
        }
        let record = sweeps % SINKHORN_RECORD_EVERY == 0 || sweeps == 1;
        let finished = err < config.kkt_tol || sweeps >= config.max_sweeps;
        if record || finished {
            let x = chi_log(&plan, &s, problem, eta)?;
            let ev = evaluate(&x, &s.gamma, problem)?;
            rec.push(sweeps, sweeps, 0, &ev, err)?;
            let reached = err < config.kkt_tol || ev.kkt.delta_kkt < config.kkt_tol;
            if reached || finished || rec.over_budget() {
                if reached {
                    stop = OuterStop::Converged;
                } else if sweeps < config.max_sweeps {
                    stop = OuterStop::TimeBudget;
                }
                state = s;
                last = Some((ev, sweeps));
                break;
            }
        }
        state = TwoDualState {
            gamma: gamma_from_col_lse(&lse, problem, eta),
            zeta: s.zeta,
        };
    }
    let x = chi_log(&plan, &state, problem, eta)?;
    finish(
        problem,
        x,
        state.gamma,
        last,
        stop,
        rec,
        sweeps,
        0,
        0,
        Vec::new(),
    )
}

#[allow(clippy::too_many_arguments)]
fn finish(
    problem: &OtProblem,
    plan: LogPlan,
    gamma: Vec<f64>,
    last: Option<(Evaluation, usize)>,
    stop: OuterStop,
    rec: Recorder<'_>,
    inner_total: usize,
    cg_total: usize,
    warm_sweeps: usize,
    inner_reports: Vec<InnerReport>,
) -> Result<OuterResult> {
    let (ev, outer_iters) = match last {
        Some(x) => x,
        None => (evaluate(&plan, &gamma, problem)?, 0),
    };
    Ok(OuterResult {
        final_logplan: plan,
        rounded_plan: ev.rounded,
        objective: ev.objective,
        kkt: ev.kkt,
        outer_iters,
        wall_seconds: rec.clock.seconds(),
        trajectory: rec.trajectory,
        gamma,
        stop,
        inner_total,
        cg_total,
        warm_sweeps,
        inner_reports,
    })
}
