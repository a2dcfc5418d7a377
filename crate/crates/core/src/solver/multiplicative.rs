//! Safe control under multiplicative (control-matrix) uncertainty.
//!
//! Each mode `i` at per-mode confidence `p_i` contributes the cone built
//! by [`build_soc_constraint`]; the admissible allocations live on the
//! face `sum_i w_i p_i = 1 - eps_f` with `p_i` boxed to
//! `[p_floor, p_ceil]`. The solve is bi-level:
//!
//! * lower level: at fixed allocation, the interior-point SOCP solve;
//! * upper level: projected-gradient descent of the lower-level objective
//!   over the face, with central finite-difference gradients and an
//!   Armijo backtracking step. The descent seeds from the better of the
//!   drift-informed allocation and the uniform face point, so it never
//!   ends above the uniform allocation's objective.
//!
//! When both candidate starts are infeasible, the same descent machinery
//! first minimizes the phase-I worst violation; if it crosses zero the
//! objective descent takes over, otherwise the solve reports
//! `InfeasibleRelaxed` with the least-violating control found.

use super::additive::{binary_search_allocation, AdditiveOptions};
use super::socp::{
    build_soc_constraint, max_violation, solve_socp, SocConstraint, SocpError, SocpOptions,
};
use super::{ModeAllocation, SafeControlResult, SolveDiagnostics, SolveError, SolveStatus};
use crate::exec;
use crate::mathkit::{self, NumericPolicy, Vector};
use crate::model::{DynamicsModel, ModeParams};
use crate::safety::{GammaSpec, SafetyIndex};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct MultiplicativeOptions {
    /// Lower box bound on every `p_i`.
    pub p_floor: f64,
    /// Upper box bound on every `p_i` (strictly below 1 so the chi-square
    /// quantiles stay finite).
    pub p_ceil: f64,
    /// Central finite-difference step in allocation space.
    pub fd_step: f64,
    /// Armijo backtracking shrink factor.
    pub armijo_shrink: f64,
    pub max_upper_iters: usize,
    /// Stop when an accepted step moves the allocation less than this.
    pub step_tol: f64,
    pub additive: AdditiveOptions,
    pub socp: SocpOptions,
}

impl Default for MultiplicativeOptions {
    fn default() -> Self {
        Self {
            p_floor: 0.5,
            p_ceil: 1.0 - 1e-6,
            fd_step: 1e-4,
            armijo_shrink: 0.5,
            max_upper_iters: 50,
            step_tol: 1e-5,
            additive: AdditiveOptions::default(),
            socp: SocpOptions::default(),
        }
    }
}

/// Everything fixed during one bi-level solve.
struct Problem<'a> {
    modes: &'a [ModeParams],
    grad: &'a Vector,
    gamma_val: f64,
    bounds: &'a crate::model::ControlBounds,
    opts: &'a MultiplicativeOptions,
    policy: &'a NumericPolicy,
}

impl Problem<'_> {
    fn cones(&self, p: &[f64]) -> Result<Vec<SocConstraint>, SolveError> {
        self.modes
            .iter()
            .zip(p.iter())
            .map(|(mode, &p_i)| {
                build_soc_constraint(mode, p_i, self.grad, self.gamma_val, self.policy)
            })
            .collect()
    }

    /// Lower-level objective at allocation `p`, or the infeasibility
    /// violation if no control exists.
    fn lower(&self, p: &[f64], u_ref: &Vector) -> Result<LowerOutcome, SolveError> {
        let cones = self.cones(p)?;
        match solve_socp(u_ref, &cones, self.bounds, &self.opts.socp, self.policy) {
            Ok(sol) => Ok(LowerOutcome::Feasible {
                objective: sol.objective,
                u: sol.u,
            }),
            Err(SocpError::Infeasible {
                max_violation,
                u_best,
            }) => Ok(LowerOutcome::Infeasible {
                violation: max_violation,
                u_best,
            }),
            Err(SocpError::Numeric(msg)) => Err(SolveError::Socp(msg)),
        }
    }
}

enum LowerOutcome {
    Feasible { objective: f64, u: Vector },
    Infeasible { violation: f64, u_best: Vector },
}

impl LowerOutcome {
    fn objective_or_inf(&self) -> f64 {
        match self {
            LowerOutcome::Feasible { objective, .. } => *objective,
            LowerOutcome::Infeasible { .. } => f64::INFINITY,
        }
    }
    fn violation_or_neg(&self, cones_viol: f64) -> f64 {
        match self {
            LowerOutcome::Feasible { .. } => cones_viol,
            LowerOutcome::Infeasible { violation, .. } => *violation,
        }
    }
}

/// Project `p_raw` onto the allocation face
/// `{ p : sum w_i p_i = target, floor <= p_i <= ceil }` in the Euclidean
/// metric (bisection on the shift multiplier).
fn project_face(p_raw: &[f64], weights: &[f64], target: f64, floor: f64, ceil: f64) -> Vec<f64> {
    let value = |lambda: f64| -> f64 {
        p_raw
            .iter()
            .zip(weights)
            .map(|(&p, &w)| (p + lambda * w).clamp(floor, ceil) * w)
            .sum()
    };
    let mut lo = -1.0;
    let mut hi = 1.0;
    for _ in 0..200 {
        if value(lo) <= target {
            break;
        }
        lo *= 2.0;
    }
    for _ in 0..200 {
        if value(hi) >= target {
            break;
        }
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if value(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let lambda = 0.5 * (lo + hi);
    p_raw
        .iter()
        .zip(weights)
        .map(|(&p, &w)| (p + lambda * w).clamp(floor, ceil))
        .collect()
}

/// Initial allocation: run the drift-only allocation search (ignoring the
/// control-matrix covariance) and project its per-mode probabilities onto
/// the face; fall back to the uniform allocation `p_i = target` when the
/// search cannot reach the target.
fn initial_allocation(
    modes: &[ModeParams],
    grad: &Vector,
    gamma_val: f64,
    eps_f: f64,
    opts: &MultiplicativeOptions,
    policy: &NumericPolicy,
) -> Vec<f64> {
    let target = 1.0 - eps_f;
    let weights: Vec<f64> = modes.iter().map(|m| m.weight).collect();
    let from_additive =
        binary_search_allocation(modes, grad, gamma_val, eps_f, &opts.additive, policy)
            .map(|c| c.allocation.iter().map(|a| a.p).collect::<Vec<f64>>());
    let p_raw = match from_additive {
        Ok(p) => p,
        Err(_) => vec![target; modes.len()],
    };
    project_face(&p_raw, &weights, target, opts.p_floor, opts.p_ceil)
}

/// Gradient of `f` on the face via central differences, projected onto the
/// tangent space `{ d : sum w_i d_i = 0 }`. Probes run through
/// [`exec::map_indexed`] and are merged by index, so the result does not
/// depend on evaluation order. Infinite probe values (infeasible
/// allocations) fall back to one-sided differences; if both sides are
/// infinite the component is zeroed.
fn fd_gradient<F>(
    p: &[f64],
    weights: &[f64],
    floor: f64,
    ceil: f64,
    h: f64,
    f_at_p: f64,
    f: F,
) -> Vec<f64>
where
    F: Fn(&[f64]) -> f64 + Sync + Send,
{
    let n = p.len();
    let probes: Vec<f64> = exec::map_indexed(2 * n, |idx| {
        let i = idx / 2;
        let sign = if idx % 2 == 0 { 1.0 } else { -1.0 };
        let mut q = p.to_vec();
        q[i] = (q[i] + sign * h).clamp(floor, ceil);
        if q[i] == p[i] {
            f64::NAN // probe collapsed onto the base point
        } else {
            f(&q)
        }
    });
    let mut g = vec![0.0; n];
    for i in 0..n {
        let (fp, fm) = (probes[2 * i], probes[2 * i + 1]);
        let hp = ((p[i] + h).clamp(floor, ceil) - p[i]).abs();
        let hm = (p[i] - (p[i] - h).clamp(floor, ceil)).abs();
        g[i] = match (fp.is_finite(), fm.is_finite()) {
            (true, true) => (fp - fm) / (hp + hm),
            (true, false) if f_at_p.is_finite() => (fp - f_at_p) / hp,
            (false, true) if f_at_p.is_finite() => (f_at_p - fm) / hm,
            _ => 0.0,
        };
        if !g[i].is_finite() {
            g[i] = 0.0;
        }
    }
    // Tangent projection: remove the component along the face normal w.
    let wn2: f64 = weights.iter().map(|w| w * w).sum();
    let gw: f64 = g.iter().zip(weights).map(|(gi, w)| gi * w).sum();
    for i in 0..n {
        g[i] -= gw / wn2 * weights[i];
    }
    g
}

/// Generic projected-gradient descent of `f` over the face. Returns the
/// final allocation and the history of accepted values (starting with
/// `f(p0)`).
fn descend<F>(
    p0: Vec<f64>,
    weights: &[f64],
    target: f64,
    opts: &MultiplicativeOptions,
    stop_below: Option<f64>,
    f: F,
) -> (Vec<f64>, Vec<f64>)
where
    F: Fn(&[f64]) -> f64 + Sync + Send,
{
    let mut p = p0;
    let mut fv = f(&p);
    let mut history = vec![fv];
    if let Some(threshold) = stop_below {
        if fv <= threshold {
            return (p, history);
        }
    }
    for _ in 0..opts.max_upper_iters {
        let g = fd_gradient(
            &p,
            weights,
            opts.p_floor,
            opts.p_ceil,
            opts.fd_step,
            fv,
            &f,
        );
        let gnorm2: f64 = g.iter().map(|x| x * x).sum();
        let ginf = g.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        if ginf <= 1e-14 {
            break;
        }
        // First trial step moves the largest coordinate by about 0.02.
        let mut alpha = 0.02 / ginf;
        let mut accepted = false;
        for _ in 0..30 {
            let trial: Vec<f64> = p.iter().zip(&g).map(|(&pi, &gi)| pi - alpha * gi).collect();
            let p_new = project_face(&trial, weights, target, opts.p_floor, opts.p_ceil);
            let f_new = f(&p_new);
            if f_new.is_finite() && f_new <= fv - 1e-4 * alpha * gnorm2 {
                let moved: f64 = p_new
                    .iter()
                    .zip(&p)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt();
                p = p_new;
                fv = f_new;
                history.push(fv);
                accepted = moved >= opts.step_tol;
                if let Some(threshold) = stop_below {
                    if fv <= threshold {
                        return (p, history);
                    }
                }
                break;
            }
            alpha *= opts.armijo_shrink;
        }
        if !accepted {
            break;
        }
    }
    (p, history)
}

/// Full bi-level solve at state `x`.
pub fn bilevel_solve<M: DynamicsModel>(
    x: &Vector,
    u_ref: &Vector,
    model: &M,
    index: &SafetyIndex,
    gamma: &GammaSpec,
    eps_f: f64,
    opts: &MultiplicativeOptions,
    policy: &NumericPolicy,
) -> Result<SafeControlResult, SolveError> {
    let modes = model.modes_at(x)?;
    let target = 1.0 - eps_f;
    check_budget(eps_f, &modes, opts)?;
    let grad = index.gradient(x);
    let gamma_val = gamma.eval(index.value(x));
    let weights: Vec<f64> = modes.iter().map(|m| m.weight).collect();
    let problem = Problem {
        modes: &modes,
        grad: &grad,
        gamma_val,
        bounds: model.bounds(),
        opts,
        policy,
    };

    let achieved = |p: &[f64]| -> f64 { weights.iter().zip(p).map(|(w, pi)| w * pi).sum() };

    let p0 = initial_allocation(&modes, &grad, gamma_val, eps_f, opts, policy);
    let cones0 = problem.cones(&p0)?;
    let u_clip = model.bounds().clip(u_ref);

    // Fast path: the clipped reference already satisfies the initial
    // cones, and no allocation can beat an objective of
    // `||clip(u_ref) - u_ref||^2` (it is the box-closest point).
    if max_violation(&cones0, &u_clip) <= 0.0 {
        let objective = u_clip.sub(u_ref).dot(&u_clip.sub(u_ref));
        let status = if &u_clip == u_ref {
            SolveStatus::ReferenceFeasible
        } else {
            SolveStatus::Optimal
        };
        return Ok(result_from(
            u_clip,
            status,
            objective,
            &p0,
            achieved(&p0),
            &cones0,
            vec![objective],
            0,
        ));
    }

    // Two candidate starts: the drift-informed allocation and the uniform
    // face point. Seeding from whichever scores lower keeps the descent
    // from ever ending above the uniform allocation's objective.
    let p_eq = project_face(
        &vec![target; modes.len()],
        &weights,
        target,
        opts.p_floor,
        opts.p_ceil,
    );
    let mut p = p0;
    let mut violation_iters = 0;
    let mut start = problem.lower(&p, u_ref)?;
    if p_eq != p {
        let at_eq = problem.lower(&p_eq, u_ref)?;
        if at_eq.objective_or_inf() < start.objective_or_inf() {
            p = p_eq;
            start = at_eq;
        }
    }
    match start {
        LowerOutcome::Feasible { .. } => {}
        LowerOutcome::Infeasible { .. } => {
            let viol_fn = |q: &[f64]| -> f64 {
                match problem.lower(q, u_ref) {
                    Ok(out) => out.violation_or_neg(-1.0),
                    Err(_) => f64::INFINITY,
                }
            };
            let (p_v, hist_v) = descend(p, &weights, target, opts, Some(-1e-12), viol_fn);
            violation_iters = hist_v.len() - 1;
            p = p_v;
            if *hist_v.last().expect("history nonempty") > 0.0 {
                // Infeasible everywhere we can see: report the relaxed
                // least-violating control at the best allocation.
                let cones = problem.cones(&p)?;
                let u_best = match problem.lower(&p, u_ref)? {
                    LowerOutcome::Infeasible { u_best, .. } => u_best,
                    LowerOutcome::Feasible { u, .. } => u,
                };
                let objective = u_best.sub(u_ref).dot(&u_best.sub(u_ref));
                let ach = achieved(&p);
                return Ok(result_from(
                    u_best,
                    SolveStatus::InfeasibleRelaxed,
                    objective,
                    &p,
                    ach,
                    &cones,
                    vec![objective],
                    violation_iters,
                ));
            }
        }
    }

    // Objective descent from the (now feasible) allocation.
    let obj_fn = |q: &[f64]| -> f64 {
        match problem.lower(q, u_ref) {
            Ok(out) => out.objective_or_inf(),
            Err(_) => f64::INFINITY,
        }
    };
    let (p_final, history) = descend(p, &weights, target, opts, None, obj_fn);
    let cones = problem.cones(&p_final)?;
    let ach = achieved(&p_final);
    match problem.lower(&p_final, u_ref)? {
        LowerOutcome::Feasible { objective, u } => Ok(result_from(
            u,
            SolveStatus::Optimal,
            objective,
            &p_final,
            ach,
            &cones,
            history,
            violation_iters,
        )),
        LowerOutcome::Infeasible { violation, u_best } => {
            // Cannot happen after a feasible descent (steps only accept
            // finite objectives), but keep a defensive report.
            let objective = u_best.sub(u_ref).dot(&u_best.sub(u_ref));
            let mut res = result_from(
                u_best,
                SolveStatus::InfeasibleRelaxed,
                objective,
                &p_final,
                ach,
                &cones,
                history,
                violation_iters,
            );
            res.slack = violation;
            Ok(res)
        }
    }
}

/// Feasibility of a state without the objective descent: the initial
/// allocation is tried first, then the all-floors relaxation (whose
/// infeasibility certifies infeasibility for every admissible
/// allocation), then the violation descent used by [`bilevel_solve`].
pub fn multiplicative_state_feasible<M: DynamicsModel>(
    x: &Vector,
    model: &M,
    index: &SafetyIndex,
    gamma: &GammaSpec,
    eps_f: f64,
    opts: &MultiplicativeOptions,
    policy: &NumericPolicy,
) -> Result<bool, SolveError> {
    let modes = model.modes_at(x)?;
    let target = 1.0 - eps_f;
    check_budget(eps_f, &modes, opts)?;
    let grad = index.gradient(x);
    let gamma_val = gamma.eval(index.value(x));
    let weights: Vec<f64> = modes.iter().map(|m| m.weight).collect();
    let bounds = model.bounds();
    let problem = Problem {
        modes: &modes,
        grad: &grad,
        gamma_val,
        bounds,
        opts,
        policy,
    };
    let u_center = bounds.center();

    let p0 = initial_allocation(&modes, &grad, gamma_val, eps_f, opts, policy);
    match problem.lower(&p0, &u_center)? {
        LowerOutcome::Feasible { .. } => return Ok(true),
        LowerOutcome::Infeasible { .. } => {}
    }

    // Cheapest certificate of infeasibility: every admissible allocation
    // dominates the all-floors relaxation (each cone is loosest at
    // p_i = p_floor), so infeasibility there is conclusive.
    let floors = vec![opts.p_floor; modes.len()];
    match problem.lower(&floors, &u_center)? {
        LowerOutcome::Infeasible { .. } => return Ok(false),
        LowerOutcome::Feasible { .. } => {}
    }

    let viol_fn = |q: &[f64]| -> f64 {
        match problem.lower(q, &u_center) {
            Ok(out) => out.violation_or_neg(-1.0),
            Err(_) => f64::INFINITY,
        }
    };
    let (_, hist) = descend(p0, &weights, target, opts, Some(-1e-12), viol_fn);
    Ok(*hist.last().expect("history nonempty") <= 0.0)
}

fn check_budget(
    eps_f: f64,
    modes: &[ModeParams],
    opts: &MultiplicativeOptions,
) -> Result<(), SolveError> {
    let w_sum: f64 = modes.iter().map(|m| m.weight).sum();
    let target = 1.0 - eps_f;
    let lo = opts.p_floor * w_sum;
    let hi = opts.p_ceil * w_sum;
    if !(target >= lo && target <= hi) {
        return Err(SolveError::BadBudget(
            eps_f,
            format!("[{:.2e}, {:.2}] for this allocation box", 1.0 - hi, 1.0 - lo),
        ));
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn result_from(
    u: Vector,
    status: SolveStatus,
    objective: f64,
    p: &[f64],
    achieved: f64,
    cones: &[SocConstraint],
    history: Vec<f64>,
    extra_iters: usize,
) -> SafeControlResult {
    let allocation: Vec<ModeAllocation> = p
        .iter()
        .map(|&p_i| ModeAllocation {
            k: mathkit::chi2_quantile(p_i.sqrt(), 1.0)
                .map(f64::sqrt)
                .unwrap_or(f64::NAN),
            p: p_i,
            clamped: false,
            deterministic: false,
        })
        .collect();
    let slack = max_violation(cones, &u);
    SafeControlResult {
        u,
        status,
        objective,
        allocation,
        achieved,
        slack,
        diagnostics: SolveDiagnostics {
            iterations: history.len().saturating_sub(1) + extra_iters,
            objective_history: history,
            kkt_residual: 0.0,
        },
    }
}
