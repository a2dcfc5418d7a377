//! Safe control under additive (drift-only) uncertainty.
//!
//! With `g` deterministic and common across modes, mode `i`'s chance
//! constraint at confidence `p_i` is the halfspace
//!
//! ```text
//! grad . (g u) <= -gamma + o_i(k_i),
//! o_i(k_i) = -grad . mu_f_i - k_i rho_i,
//! rho_i    = sqrt(grad^T Sigma_f_i grad),
//! p_i      = chi2_cdf(k_i^2, 1),
//! ```
//!
//! where `k_i` scales the confidence ellipsoid of the projected drift.
//! (`p_i` is the two-sided tail bound, which is what the per-mode
//! ellipsoid certificate gives; it slightly over-covers the one-sided
//! event, so validity is preserved.) The control only feels the binding
//! offset `min_i o_i`, so the least conservative allocation spends risk
//! until all enforced offsets are equal. That reduces the search to one
//! scalar: bisect the first mode's multiplier `k_1`, chain every other
//! `k_i` through the offset equality, and keep the smallest `k_1` whose
//! mixture probability still clears `1 - eps_f`.

use super::{
    ModeAllocation, SafeControlResult, SolveDiagnostics, SolveError, SolveStatus,
};
use crate::mathkit::{self, chi2_cdf, NumericPolicy, Vector};
use crate::model::{DynamicsModel, ModeParams};
use crate::safety::{GammaSpec, SafetyIndex};
use serde::{Deserialize, Serialize};

/// Tunables of the allocation search and the projection step.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct AdditiveOptions {
    /// Bisection stops when the bracket is narrower than this.
    pub eps0: f64,
    /// Upper end of the `k_1` bracket.
    pub k_max: f64,
    /// The projection bisection stops when `|a . u - b|` falls below this.
    pub boundary_tol: f64,
}

impl Default for AdditiveOptions {
    fn default() -> Self {
        Self {
            eps0: 1e-6,
            k_max: 10.0,
            boundary_tol: 1e-8,
        }
    }
}

/// The aggregated halfspace `a . u <= b` produced by an allocation, along
/// with the allocation itself.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdditiveConstraint {
    /// `g^T grad`, the constraint normal in control space.
    pub a: Vector,
    /// `-gamma + min_i o_i` over the enforced modes.
    pub b: f64,
    pub allocation: Vec<ModeAllocation>,
    /// `sum_i w_i p_i`.
    pub achieved: f64,
    /// Bisection iterations spent.
    pub iterations: usize,
}

/// `o_i(k) = -grad . mu_f_i - k * rho_i` for one mode.
pub fn mode_offset(mode: &ModeParams, grad: &Vector, k: f64) -> Result<f64, SolveError> {
    let a = grad.dot(&mode.mu_f);
    let rho = mathkit::ellipsoid_support(grad, &mode.sigma_f)?;
    Ok(-a - k * rho)
}

/// Chain every mode's multiplier to the first mode's: solve
/// `o_i(k_i) = o_1(k_1)` for each `i`, clamping negative solutions to 0.
///
/// Errors with [`SolveError::DegenerateMode`] when a mode has `rho_i = 0`
/// and its fixed offset cannot equal `o_1` (the equality has no solution).
pub fn solve_k_chain(
    k1: f64,
    modes: &[ModeParams],
    grad: &Vector,
) -> Result<Vec<f64>, SolveError> {
    if modes.is_empty() {
        return Ok(Vec::new());
    }
    let o1 = mode_offset(&modes[0], grad, k1)?;
    let scale = 1.0 + o1.abs();
    modes
        .iter()
        .enumerate()
        .map(|(i, mode)| {
            let a = grad.dot(&mode.mu_f);
            let rho = mathkit::ellipsoid_support(grad, &mode.sigma_f)?;
            if rho == 0.0 {
                if (-a - o1).abs() <= 1e-12 * scale {
                    Ok(0.0)
                } else {
                    Err(SolveError::DegenerateMode { index: i })
                }
            } else {
                Ok(((-a - o1) / rho).max(0.0))
            }
        })
        .collect()
}

/// Per-mode quantities that the allocation search reuses.
struct PreparedMode {
    weight: f64,
    /// `grad . mu_f_i`.
    a: f64,
    /// `sqrt(grad^T Sigma_f_i grad)`.
    rho: f64,
}

/// Allocation produced by [`evaluate_allocation`] at a fixed `k_1`.
struct AllocationAtK {
    allocation: Vec<ModeAllocation>,
    achieved: f64,
    /// `min_i o_i` over enforced modes; `+inf` when nothing is enforced.
    min_offset: f64,
}

/// Evaluate the chained allocation at anchor multiplier `k1`.
///
/// Stochastic modes (`rho_i > 0`) get the chained, clamped multiplier and
/// the two-sided tail probability (clamped modes are still enforced at
/// their mean but credit `p_i = chi2_cdf(0, 1) = 0`). Deterministic modes
/// (`rho_i = 0`) have a fixed offset `-a_i`: those implied by the running
/// minimum offset credit `p_i = 1` for free, and when the mixture still
/// falls short the remaining ones are enforced greedily (largest offset
/// first), each lowering the aggregate RHS to its own offset, until the
/// target is met or none are left.
fn evaluate_allocation(
    k1: f64,
    prepared: &[PreparedMode],
    anchor: Option<usize>,
    target: f64,
) -> AllocationAtK {
    let n = prepared.len();
    let mut allocation: Vec<ModeAllocation> = Vec::with_capacity(n);
    let mut achieved = 0.0;
    let mut min_offset = f64::INFINITY;

    // Stochastic pass: chain off the anchor's offset.
    let o1 = anchor.map(|a0| -prepared[a0].a - k1 * prepared[a0].rho);
    for pm in prepared {
        if pm.rho > 0.0 {
            let o1 = o1.expect("anchor exists when stochastic modes exist");
            let raw = (-pm.a - o1) / pm.rho;
            let clamped = raw < 0.0;
            let k = raw.max(0.0);
            let p = if clamped {
                0.0
            } else {
                chi2_cdf(k * k, 1.0).expect("k^2 is finite and nonnegative")
            };
            let offset = -pm.a - k * pm.rho;
            min_offset = min_offset.min(offset);
            achieved += pm.weight * p;
            allocation.push(ModeAllocation {
                k,
                p,
                clamped,
                deterministic: false,
            });
        } else {
            // Placeholder; the deterministic pass fills this in.
            allocation.push(ModeAllocation {
                k: 0.0,
                p: 0.0,
                clamped: false,
                deterministic: true,
            });
        }
    }

    // Deterministic pass 1: modes implied by the current RHS are free.
    let mut costly: Vec<(usize, f64)> = Vec::new();
    for (i, pm) in prepared.iter().enumerate() {
        if pm.rho > 0.0 {
            continue;
        }
        let offset = -pm.a;
        if offset >= min_offset {
            allocation[i].p = 1.0;
            achieved += pm.weight;
        } else {
            costly.push((i, offset));
        }
    }

    // Deterministic pass 2: enforce costly modes greedily if needed.
    if achieved < target && !costly.is_empty() {
        costly.sort_by(|x, y| y.1.total_cmp(&x.1).then(x.0.cmp(&y.0)));
        for (i, offset) in costly {
            if achieved >= target {
                break;
            }
            allocation[i].p = 1.0;
            achieved += prepared[i].weight;
            min_offset = min_offset.min(offset);
        }
    }

    AllocationAtK {
        allocation,
        achieved,
        min_offset,
    }
}

/// Find the least-conservative risk allocation by bisecting the first
/// stochastic mode's multiplier over `[0, k_max]`.
///
/// The bracket keeps the invariant "the right endpoint's mixture
/// probability clears the target", so the returned allocation (taken at
/// the right endpoint) always satisfies `achieved >= 1 - eps_f`; the left
/// endpoint certifies that no multiplier smaller by more than `eps0`
/// would. Errors with [`SolveError::BracketExhausted`] when even
/// `k_1 = k_max` cannot reach the target.
pub fn binary_search_allocation(
    modes: &[ModeParams],
    grad: &Vector,
    gamma_val: f64,
    eps_f: f64,
    opts: &AdditiveOptions,
    _policy: &NumericPolicy,
) -> Result<AdditiveConstraint, SolveError> {
    if !(0.0..1.0).contains(&eps_f) {
        return Err(SolveError::BadBudget(eps_f, "[0, 1)".to_string()));
    }
    let target = 1.0 - eps_f;
    let prepared: Vec<PreparedMode> = modes
        .iter()
        .map(|mode| {
            Ok(PreparedMode {
                weight: mode.weight,
                a: grad.dot(&mode.mu_f),
                rho: mathkit::ellipsoid_support(grad, &mode.sigma_f)?,
            })
        })
        .collect::<Result<_, SolveError>>()?;
    let anchor = prepared.iter().position(|pm| pm.rho > 0.0);

    // Control-space normal; the additive setting has a mode-independent
    // control matrix (the caller verifies that), so the first mode's is
    // representative.
    let a_vec = modes[0].mu_g.tr_matvec(grad)?;
    let finish = |at: AllocationAtK, iterations: usize| AdditiveConstraint {
        a: a_vec.clone(),
        b: -gamma_val + at.min_offset,
        allocation: at.allocation,
        achieved: at.achieved,
        iterations,
    };

    if anchor.is_none() {
        // Fully deterministic mixture: no multiplier to search; the greedy
        // enforcement pass alone decides.
        let at = evaluate_allocation(0.0, &prepared, None, target);
        if at.achieved < target {
            return Err(SolveError::BracketExhausted {
                achieved: at.achieved,
                target,
            });
        }
        return Ok(finish(at, 0));
    }

    let at_kmax = evaluate_allocation(opts.k_max, &prepared, anchor, target);
    if at_kmax.achieved < target {
        return Err(SolveError::BracketExhausted {
            achieved: at_kmax.achieved,
            target,
        });
    }

    let mut lo = 0.0f64;
    let mut hi = opts.k_max;
    let mut iterations = 0;
    while hi - lo >= opts.eps0 {
        let mid = 0.5 * (lo + hi);
        let at = evaluate_allocation(mid, &prepared, anchor, target);
        if at.achieved > target {
            hi = mid;
        } else {
            lo = mid;
        }
        iterations += 1;
    }
    Ok(finish(
        evaluate_allocation(hi, &prepared, anchor, target),
        iterations,
    ))
}

/// Solve the safe-control problem for an additive-uncertainty model:
/// minimize `||u - u_ref||^2` over the control box subject to the
/// aggregated halfspace from [`binary_search_allocation`].
///
/// The box-constrained single-halfspace projection is exact: the KKT
/// point is `u(t) = clip(u_ref - t a)` for some `t >= 0`, and `a . u(t)`
/// is nonincreasing in `t`, so a bisection on `t` lands on the active
/// constraint.
pub fn solve_safe_control_additive<M: DynamicsModel>(
    x: &Vector,
    u_ref: &Vector,
    model: &M,
    index: &SafetyIndex,
    gamma: &GammaSpec,
    eps_f: f64,
    opts: &AdditiveOptions,
    policy: &NumericPolicy,
) -> Result<SafeControlResult, SolveError> {
    let modes = model.modes_at(x)?;
    verify_additive(&modes)?;
    let grad = index.gradient(x);
    let gamma_val = gamma.eval(index.value(x));

    let constraint = binary_search_allocation(&modes, &grad, gamma_val, eps_f, opts, policy)?;
    let a = &constraint.a;
    let b = constraint.b;
    let bounds = model.bounds();

    let mut diagnostics = SolveDiagnostics {
        iterations: constraint.iterations,
        ..Default::default()
    };

    let u_clip = bounds.clip(u_ref);
    let build = |u: Vector, status: SolveStatus, diag: SolveDiagnostics| {
        let objective = u.sub(u_ref).dot(&u.sub(u_ref));
        let slack = a.dot(&u) - b;
        let mut diag = diag;
        diag.objective_history = vec![objective];
        SafeControlResult {
            u,
            status,
            objective,
            allocation: constraint.allocation.clone(),
            achieved: constraint.achieved,
            slack,
            diagnostics: diag,
        }
    };

    if a.dot(&u_clip) <= b {
        let status = if &u_clip == u_ref {
            SolveStatus::ReferenceFeasible
        } else {
            SolveStatus::Optimal
        };
        return Ok(build(u_clip, status, diagnostics));
    }

    // The box vertex minimizing a . u; coordinates with a_j = 0 stay at the
    // clipped reference (any value minimizes, this one is closest).
    let mut u_min = u_clip.clone();
    for j in 0..a.len() {
        if a[j] > 0.0 {
            u_min[j] = bounds.lower()[j];
        } else if a[j] < 0.0 {
            u_min[j] = bounds.upper()[j];
        }
    }
    if a.dot(&u_min) > b {
        diagnostics.kkt_residual = f64::NAN;
        return Ok(build(u_min, SolveStatus::InfeasibleRelaxed, diagnostics));
    }

    // Bisect the multiplier scale t in u(t) = clip(u_ref - t a).
    let h = |t: f64| a.dot(&bounds.clip(&u_ref.sub(&a.scaled(t)))) - b;
    let mut t_hi = 1.0;
    let mut grow = 0;
    while h(t_hi) > 0.0 {
        t_hi *= 2.0;
        grow += 1;
        if grow > 200 {
            break;
        }
    }
    let mut t_lo = 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (t_lo + t_hi);
        if h(mid) > 0.0 {
            t_lo = mid;
        } else {
            t_hi = mid;
        }
        if h(t_hi).abs() <= opts.boundary_tol {
            break;
        }
    }
    let u = bounds.clip(&u_ref.sub(&a.scaled(t_hi)));
    diagnostics.kkt_residual = (a.dot(&u) - b).abs();
    Ok(build(u, SolveStatus::Optimal, diagnostics))
}

/// The additive solver requires a deterministic control matrix shared by
/// all modes.
fn verify_additive(modes: &[ModeParams]) -> Result<(), SolveError> {
    let first = &modes[0].mu_g;
    let scale = 1.0 + first.max_abs();
    for mode in modes {
        if !mode.sigma_g.is_zero() {
            return Err(SolveError::NotAdditive);
        }
        if mode.mu_g.rows() != first.rows() || mode.mu_g.cols() != first.cols() {
            return Err(SolveError::NotAdditive);
        }
        for i in 0..first.rows() {
            for j in 0..first.cols() {
                if (mode.mu_g.at(i, j) - first.at(i, j)).abs() > 1e-9 * scale {
                    return Err(SolveError::NotAdditive);
                }
            }
        }
    }
    Ok(())
}
