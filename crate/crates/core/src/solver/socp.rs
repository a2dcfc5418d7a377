//! Second-order-cone program solver for the multiplicative-uncertainty
//! control problem: minimize `||u - u_ref||^2` over the control box
//! subject to cones `||L_i^T u|| <= -mu_i . u + c_i`.
//!
//! A log-barrier interior-point method: phase I minimizes the worst cone
//! violation to find a strictly interior point (or certify infeasibility),
//! phase II follows the central path of
//!
//! ```text
//! t ||u - u_ref||^2 - sum_i log((c_i - mu_i.u)^2 - u^T L_i L_i^T u)
//!                   - sum_j log(u_j - lo_j) - sum_j log(hi_j - u_j)
//! ```
//!
//! with damped Newton inner iterations, multiplying `t` by
//! `1 / barrier_decrease` per outer stage until the duality measure
//! `nu / t` falls below `gap_tol`.

use super::SolveError;
use crate::mathkit::{self, Matrix, NumericPolicy, Vector};
use crate::model::{ControlBounds, ModeParams};
use serde::{Deserialize, Serialize};

/// One chance cone `||L^T u|| <= -mu . u + c`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SocConstraint {
    /// `m x m` factor with `L L^T = q`.
    pub l: Matrix,
    /// Scaled projected covariance of the control matrix.
    pub q: Matrix,
    pub mu: Vector,
    pub c: f64,
}

impl SocConstraint {
    /// `||L^T u|| + mu . u - c`; nonpositive iff the cone holds at `u`.
    pub fn violation(&self, u: &Vector) -> f64 {
        let lt_u = self.l.tr_matvec(u).expect("cone dimension matches control");
        lt_u.norm() + self.mu.dot(u) - self.c
    }

    fn is_vacuous(&self) -> bool {
        self.q.max_abs() == 0.0 && self.mu.iter().all(|&v| v == 0.0)
    }
}

/// Worst violation across a set of cones (`-inf` if empty).
pub fn max_violation(cones: &[SocConstraint], u: &Vector) -> f64 {
    cones
        .iter()
        .map(|c| c.violation(u))
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Build mode `i`'s cone at per-mode confidence `p_i`, splitting the
/// budget evenly between the drift and control-matrix tails
/// (`p_f = p_g = sqrt(p_i)`):
///
/// ```text
/// L L^T = chi2_quantile(sqrt(p_i), n m) * grad^T Sigma_g grad
/// mu    = mu_g^T grad
/// c     = -gamma - grad . mu_f - sqrt(chi2_quantile(sqrt(p_i), 1)) * rho
/// ```
pub fn build_soc_constraint(
    mode: &ModeParams,
    p_i: f64,
    grad: &Vector,
    gamma_val: f64,
    policy: &NumericPolicy,
) -> Result<SocConstraint, SolveError> {
    if !(0.0..1.0).contains(&p_i) {
        return Err(SolveError::BadBudget(p_i, "[0, 1) per mode".to_string()));
    }
    let sqrt_p = p_i.sqrt();
    let n = mode.mu_f.len() as f64;
    let m = mode.mu_g.cols() as f64;
    let scale_g = mathkit::chi2_quantile(sqrt_p, n * m)?;
    let q = mode.sigma_g.projected(grad)?.scaled(scale_g);
    let l = mathkit::cholesky(&q, policy)?;
    let rho = mathkit::ellipsoid_support(grad, &mode.sigma_f)?;
    let k_f = mathkit::chi2_quantile(sqrt_p, 1.0)?.sqrt();
    let mu = mode.mu_g.tr_matvec(grad)?;
    let c = -gamma_val - grad.dot(&mode.mu_f) - k_f * rho;
    Ok(SocConstraint { l, q, mu, c })
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SocpOptions {
    /// Initial barrier weight `t`.
    pub t_init: f64,
    /// Per-stage barrier reduction: the duality measure shrinks by this
    /// factor each outer stage (`t` grows by its inverse).
    pub barrier_decrease: f64,
    /// Stop when `nu / t` (the barrier duality measure) drops below this.
    pub gap_tol: f64,
    pub max_outer: usize,
    pub max_newton: usize,
    /// Phase I margins: exit early once a point with violation below
    /// `-phase1_exit_margin` is found; declare infeasibility when the
    /// optimal worst violation exceeds `infeasibility_tol`.
    pub phase1_exit_margin: f64,
    pub infeasibility_tol: f64,
}

impl Default for SocpOptions {
    fn default() -> Self {
        Self {
            t_init: 1.0,
            barrier_decrease: 0.2,
            gap_tol: 1e-8,
            max_outer: 60,
            max_newton: 50,
            phase1_exit_margin: 1e-7,
            infeasibility_tol: 1e-9,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SocpSolution {
    pub u: Vector,
    /// `||u - u_ref||^2`.
    pub objective: f64,
    /// `||2 (u - u_ref) + sum_i lambda_i grad_i||` minimized over
    /// nonnegative multipliers on the active constraints, maxed with the
    /// final duality measure `nu / t`.
    pub kkt_residual: f64,
    pub newton_iters: usize,
    /// The feasible set has numerically empty interior; `u` is the
    /// phase-I minimax point rather than a central-path limit.
    pub tight: bool,
}

#[derive(Debug, Clone)]
pub enum SocpError {
    /// No control in the box satisfies all cones. `u_best` minimizes the
    /// worst violation, which is `max_violation` there.
    Infeasible { max_violation: f64, u_best: Vector },
    Numeric(String),
}

impl std::fmt::Display for SocpError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SocpError::Infeasible { max_violation, .. } => {
                write!(f, "infeasible: minimal worst violation {max_violation:.6e}")
            }
            SocpError::Numeric(msg) => write!(f, "numeric failure: {msg}"),
        }
    }
}

impl std::error::Error for SocpError {}

/// Solve the box-and-cones projection problem.
pub fn solve_socp(
    u_ref: &Vector,
    cones: &[SocConstraint],
    bounds: &ControlBounds,
    opts: &SocpOptions,
    policy: &NumericPolicy,
) -> Result<SocpSolution, SocpError> {
    let m = bounds.dim();
    if u_ref.len() != m {
        return Err(SocpError::Numeric("u_ref dimension".to_string()));
    }
    // Cones with no control dependence are decided analytically: `0 <= c`.
    let mut active: Vec<SocConstraint> = Vec::with_capacity(cones.len());
    for cone in cones {
        if cone.is_vacuous() {
            if cone.c < 0.0 {
                return Err(SocpError::Infeasible {
                    max_violation: -cone.c,
                    u_best: bounds.clip(u_ref),
                });
            }
        } else {
            active.push(cone.clone());
        }
    }
    let u_clip = bounds.clip(u_ref);
    if active.is_empty() {
        return Ok(SocpSolution {
            objective: u_clip.sub(u_ref).dot(&u_clip.sub(u_ref)),
            u: u_clip,
            kkt_residual: 0.0,
            newton_iters: 0,
            tight: false,
        });
    }

    // Phase I unless the clipped reference is already strictly interior.
    let start = if max_violation(&active, &u_clip) < -opts.phase1_exit_margin
        && strictly_in_box(&u_clip, bounds)
    {
        u_clip
    } else {
        match phase_one(u_ref, &active, bounds, opts, policy)? {
            PhaseOne::Interior(u) => u,
            PhaseOne::Tight(u) => {
                return Ok(SocpSolution {
                    objective: u.sub(u_ref).dot(&u.sub(u_ref)),
                    u,
                    kkt_residual: f64::NAN,
                    newton_iters: 0,
                    tight: true,
                });
            }
        }
    };

    phase_two(u_ref, &active, bounds, start, opts, policy)
}

fn strictly_in_box(u: &Vector, bounds: &ControlBounds) -> bool {
    (0..u.len()).all(|j| {
        let span = bounds.upper()[j] - bounds.lower()[j];
        u[j] > bounds.lower()[j] + 1e-9 * span && u[j] < bounds.upper()[j] - 1e-9 * span
    })
}

enum PhaseOne {
    Interior(Vector),
    /// Feasible only up to `infeasibility_tol`: no usable interior.
    Tight(Vector),
}

/// Minimize `s` subject to `||L_i^T u|| <= -mu_i.u + (c_i + s)`, `u` in the
/// box. Variables `y = (u, s)`.
fn phase_one(
    u_ref: &Vector,
    cones: &[SocConstraint],
    bounds: &ControlBounds,
    opts: &SocpOptions,
    policy: &NumericPolicy,
) -> Result<PhaseOne, SocpError> {
    let m = bounds.dim();
    let dim = m + 1;

    // Start from the reference pulled strictly inside the box, with s one
    // unit above the worst violation there.
    let mut y = Vector::zeros(dim);
    for j in 0..m {
        let span = bounds.upper()[j] - bounds.lower()[j];
        let margin = 1e-3 * span.max(1e-6);
        y[j] = u_ref[j].clamp(bounds.lower()[j] + margin, bounds.upper()[j] - margin);
    }
    let u0 = head(&y, m);
    y[m] = max_violation(cones, &u0) + 1.0;

    let nu = 2.0 * cones.len() as f64 + 2.0 * m as f64;
    let gap_target = opts.gap_tol.min(0.1 * opts.infeasibility_tol);
    let mut t = opts.t_init;
    let mut best_u = u0.clone();
    let mut best_viol = max_violation(cones, &u0);

    let eval = |y: &Vector, t: f64| -> Option<f64> {
        let mut val = t * y[m];
        let u = head(y, m);
        for cone in cones {
            let r = cone.c + y[m] - cone.mu.dot(&u);
            if r <= 0.0 {
                return None;
            }
            let s = r * r - cone.q.quad_form(&u).expect("cone dims");
            if s <= 0.0 {
                return None;
            }
            val -= s.ln();
        }
        val -= box_log(&u, bounds)?;
        Some(val)
    };

    for _outer in 0..opts.max_outer {
        for _inner in 0..opts.max_newton {
            let u = head(&y, m);
            let viol = max_violation(cones, &u);
            if viol < best_viol {
                best_viol = viol;
                best_u = u.clone();
            }
            if viol < -opts.phase1_exit_margin {
                return Ok(PhaseOne::Interior(u));
            }

            let mut grad = Vector::zeros(dim);
            grad[m] = t;
            let mut hess = Matrix::zeros(dim, dim);
            for cone in cones {
                let r = cone.c + y[m] - cone.mu.dot(&u);
                let qu = cone.q.matvec(&u).expect("cone dims");
                let s = r * r - u.dot(&qu);
                // grad s over (u, s-var): [-2 r mu - 2 Q u, 2 r].
                let mut gs = Vector::zeros(dim);
                for j in 0..m {
                    gs[j] = -2.0 * r * cone.mu[j] - 2.0 * qu[j];
                }
                gs[m] = 2.0 * r;
                accumulate_cone(&mut grad, &mut hess, &gs, s, &cone.mu, &cone.q, true);
            }
            accumulate_box(&mut grad, &mut hess, &u, bounds);

            let step = match hess.solve_spd(&grad, policy) {
                Ok(s) => s.scaled(-1.0),
                Err(e) => return Err(SocpError::Numeric(format!("phase-1 newton: {e}"))),
            };
            let decrement2 = -grad.dot(&step);
            if decrement2 <= 2e-13 {
                break;
            }
            let f0 = eval(&y, t).ok_or_else(|| {
                SocpError::Numeric("phase-1 iterate left the barrier domain".to_string())
            })?;
            let mut alpha = 1.0;
            let mut accepted = false;
            for _ in 0..60 {
                let mut y_new = y.clone();
                y_new.axpy(alpha, &step);
                if let Some(f_new) = eval(&y_new, t) {
                    if f_new <= f0 - 1e-4 * alpha * decrement2 {
                        y = y_new;
                        accepted = true;
                        break;
                    }
                }
                alpha *= 0.5;
            }
            if !accepted {
                break;
            }
        }
        if nu / t <= gap_target {
            break;
        }
        t /= opts.barrier_decrease;
    }

    let u = head(&y, m);
    let viol = max_violation(cones, &u);
    if viol < best_viol {
        best_viol = viol;
        best_u = u;
    }
    if best_viol < -opts.phase1_exit_margin {
        Ok(PhaseOne::Interior(best_u))
    } else if best_viol <= opts.infeasibility_tol {
        Ok(PhaseOne::Tight(best_u))
    } else {
        Err(SocpError::Infeasible {
            max_violation: best_viol,
            u_best: best_u,
        })
    }
}

fn phase_two(
    u_ref: &Vector,
    cones: &[SocConstraint],
    bounds: &ControlBounds,
    start: Vector,
    opts: &SocpOptions,
    policy: &NumericPolicy,
) -> Result<SocpSolution, SocpError> {
    let m = bounds.dim();
    let nu = 2.0 * cones.len() as f64 + 2.0 * m as f64;
    let mut u = start;
    let mut t = opts.t_init;
    let mut newton_iters = 0;

    // The stage problem is kept in objective units, `|u - u_ref|^2 +
    // barrier / t`: at the final barrier weights (t ~ 1e8) the classic
    // `t f0 + barrier` form loses the line-search decrements to floating
    // point cancellation before the gradient is polished.
    let eval = |u: &Vector, inv_t: f64| -> Option<f64> {
        let d = u.sub(u_ref);
        let mut barrier = 0.0;
        for cone in cones {
            let r = cone.c - cone.mu.dot(u);
            if r <= 0.0 {
                return None;
            }
            let s = r * r - cone.q.quad_form(u).expect("cone dims");
            if s <= 0.0 {
                return None;
            }
            barrier -= s.ln();
        }
        barrier -= box_log(u, bounds)?;
        Some(d.dot(&d) + inv_t * barrier)
    };

    loop {
        let inv_t = 1.0 / t;
        for _inner in 0..opts.max_newton {
            let mut bgrad = Vector::zeros(m);
            let mut bhess = Matrix::zeros(m, m);
            for cone in cones {
                let r = cone.c - cone.mu.dot(&u);
                let qu = cone.q.matvec(&u).expect("cone dims");
                let s = r * r - u.dot(&qu);
                let mut gs = Vector::zeros(m);
                for j in 0..m {
                    gs[j] = -2.0 * r * cone.mu[j] - 2.0 * qu[j];
                }
                accumulate_cone(&mut bgrad, &mut bhess, &gs, s, &cone.mu, &cone.q, false);
            }
            accumulate_box(&mut bgrad, &mut bhess, &u, bounds);
            let d = u.sub(u_ref);
            let mut grad = d.scaled(2.0);
            grad.axpy(inv_t, &bgrad);
            let mut hess = bhess.scaled(inv_t);
            for j in 0..m {
                hess.add_at(j, j, 2.0);
            }
            // Gradient of the scaled stage problem, grad F_t / t. Near
            // the final barrier weight it bottoms out at roughly
            // hessian * ulp(u), so it serves as a stage exit only; the
            // reported KKT residual is computed from recovered
            // multipliers after the ladder finishes.
            if grad.norm() <= 1e-8 * (1.0 + d.norm()) {
                break;
            }

            let step = match hess.solve_spd(&grad, policy) {
                Ok(s) => s.scaled(-1.0),
                Err(e) => return Err(SocpError::Numeric(format!("phase-2 newton: {e}"))),
            };
            let decrement2 = -grad.dot(&step);
            if decrement2 <= 1e-20 {
                break;
            }
            let f0 = eval(&u, inv_t).ok_or_else(|| {
                SocpError::Numeric("phase-2 iterate left the barrier domain".to_string())
            })?;
            let mut alpha = 1.0;
            let mut accepted = false;
            for _ in 0..60 {
                let mut u_new = u.clone();
                u_new.axpy(alpha, &step);
                if let Some(f_new) = eval(&u_new, inv_t) {
                    if f_new <= f0 - 1e-4 * alpha * decrement2 {
                        u = u_new;
                        accepted = true;
                        newton_iters += 1;
                        break;
                    }
                }
                alpha *= 0.5;
            }
            if !accepted {
                break;
            }
        }
        if nu / t <= opts.gap_tol || newton_iters >= opts.max_outer * opts.max_newton {
            break;
        }
        t /= opts.barrier_decrease;
    }

    let d = u.sub(u_ref);
    let stationarity = stationarity_residual(&u, u_ref, cones, bounds);
    Ok(SocpSolution {
        objective: d.dot(&d),
        u,
        kkt_residual: stationarity.max(nu / t),
        newton_iters,
        tight: false,
    })
}

/// Stationarity half of the KKT residual at `u`: the norm of
/// `2 (u - u_ref) + sum_i lambda_i grad_i`, minimized over multipliers
/// `lambda >= 0` on the active cones and box faces. The barrier gradient
/// cannot serve here: at the final barrier weight its floor is
/// `hessian * ulp(u)`, orders of magnitude above the true residual.
fn stationarity_residual(
    u: &Vector,
    u_ref: &Vector,
    cones: &[SocConstraint],
    bounds: &ControlBounds,
) -> f64 {
    let m = u.len();
    let obj_grad = u.sub(u_ref).scaled(2.0);
    let mut cols: Vec<Vector> = Vec::new();
    for cone in cones {
        if cone.violation(u) < -1e-6 * (1.0 + cone.c.abs()) {
            continue;
        }
        // grad violation = Q u / ||L^T u|| + mu (mu alone at the kink).
        let qu = cone.q.matvec(u).expect("cone dims");
        let lt_norm = cone.l.tr_matvec(u).expect("cone dims").norm();
        let mut g = cone.mu.clone();
        if lt_norm > 0.0 {
            g.axpy(1.0 / lt_norm, &qu);
        }
        cols.push(g);
    }
    for j in 0..m {
        let span = bounds.upper()[j] - bounds.lower()[j];
        if u[j] - bounds.lower()[j] <= 1e-6 * span {
            let mut e = Vector::zeros(m);
            e[j] = -1.0;
            cols.push(e);
        }
        if bounds.upper()[j] - u[j] <= 1e-6 * span {
            let mut e = Vector::zeros(m);
            e[j] = 1.0;
            cols.push(e);
        }
    }
    if cols.is_empty() {
        return obj_grad.norm();
    }
    let residual = |lambda: &[f64]| -> Vector {
        let mut r = obj_grad.clone();
        for (col, &l) in cols.iter().zip(lambda) {
            r.axpy(l, col);
        }
        r
    };
    // Nonnegative least squares by projected gradient with a safe step
    // (trace bounds the top eigenvalue); the result upper-bounds the true
    // minimum, so the report errs conservative.
    let lip: f64 = cols
        .iter()
        .map(|c| c.dot(c))
        .sum::<f64>()
        .max(f64::MIN_POSITIVE);
    let step = 1.0 / lip;
    let mut lambda = vec![0.0f64; cols.len()];
    for _ in 0..2000 {
        let r = residual(&lambda);
        for (i, col) in cols.iter().enumerate() {
            lambda[i] = (lambda[i] - step * col.dot(&r)).max(0.0);
        }
    }
    residual(&lambda).norm()
}

fn head(y: &Vector, m: usize) -> Vector {
    Vector::new(y.as_slice()[..m].to_vec())
}

/// Sum of box log terms, `None` when `u` is not strictly inside.
fn box_log(u: &Vector, bounds: &ControlBounds) -> Option<f64> {
    let mut s = 0.0;
    for j in 0..u.len() {
        let a = u[j] - bounds.lower()[j];
        let b = bounds.upper()[j] - u[j];
        if a <= 0.0 || b <= 0.0 {
            return None;
        }
        s += a.ln() + b.ln();
    }
    Some(s)
}

/// Add `-log s` barrier derivatives for one cone. `gs` is the gradient of
/// the cone function `s(y)`; its Hessian is `2 dr dr^T - 2 diag-block(Q)`,
/// which with `dr = (-mu, [1])` expands to the terms below. When
/// `extended` is set the variable vector has the slack coordinate
/// appended.
fn accumulate_cone(
    grad: &mut Vector,
    hess: &mut Matrix,
    gs: &Vector,
    s: f64,
    mu: &Vector,
    q: &Matrix,
    extended: bool,
) {
    let dim = grad.len();
    let m = mu.len();
    // grad(-log s) = -gs / s.
    for i in 0..dim {
        grad[i] += -gs[i] / s;
    }
    // hess(-log s) = gs gs^T / s^2 - hess(s) / s,
    // hess(s) = 2 dr dr^T - 2 [Q 0; 0 0].
    let s2 = s * s;
    for i in 0..dim {
        for j in 0..dim {
            hess.add_at(i, j, gs[i] * gs[j] / s2);
        }
    }
    // dr = (-mu, 1) in the extended space, (-mu) otherwise.
    let dr_last = if extended { 1.0 } else { 0.0 };
    for i in 0..dim {
        let dri = if i < m { -mu[i] } else { dr_last };
        for j in 0..dim {
            let drj = if j < m { -mu[j] } else { dr_last };
            hess.add_at(i, j, -2.0 * dri * drj / s);
        }
    }
    for i in 0..m {
        for j in 0..m {
            hess.add_at(i, j, 2.0 * q.at(i, j) / s);
        }
    }
}

/// Add box-barrier derivatives over the first `bounds.dim()` coordinates.
fn accumulate_box(grad: &mut Vector, hess: &mut Matrix, u: &Vector, bounds: &ControlBounds) {
    for j in 0..bounds.dim() {
        let a = u[j] - bounds.lower()[j];
        let b = bounds.upper()[j] - u[j];
        grad[j] += -1.0 / a + 1.0 / b;
        hess.add_at(j, j, 1.0 / (a * a) + 1.0 / (b * b));
    }
}
