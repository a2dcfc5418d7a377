//! Closed-loop simulation, uni-modal baselines, and feasible-set
//! comparison.
//!
//! Rollouts integrate the true plant with classic RK4 under a zero-order
//! hold: at each control step one latent realization (mode plus
//! disturbance or motor constant) is drawn and held fixed over the step,
//! so the integrated vector field is smooth in the state and the RK4
//! order is meaningful.

use crate::cert::SolverKind;
use crate::exec;
use crate::mathkit::{NumericPolicy, Vector};
use crate::model::{
    mixture_f_moments, mixture_g_moments, ControlBounds, DynamicsModel, GCovariance, ModeParams,
    ModelError, SegwayModel, SegwayTruth, IDX_DP, IDX_PHI,
};
use crate::safety::{GammaSpec, SafetyIndex};
use crate::solver::{
    bilevel_solve, solve_safe_control_additive, ModeAllocation, MultiplicativeOptions, SolveError,
    SolveStatus,
};
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Proportional speed tracker: `u = gain * (target_speed - pdot)` on every
/// control channel (the Segway has one).
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct NominalController {
    pub gain: f64,
    pub target_speed: f64,
}

impl Default for NominalController {
    fn default() -> Self {
        Self {
            gain: 10.0,
            target_speed: 1.0,
        }
    }
}

impl NominalController {
    pub fn control(&self, x: &Vector, m: usize) -> Vector {
        let mut u = Vector::zeros(m);
        for j in 0..m {
            u[j] = self.gain * (self.target_speed - x[IDX_DP]);
        }
        u
    }
}

/// One RK4 step of `xdot = f(x) + g(x) u` for a fixed realization.
pub fn rk4_step(
    truth: &SegwayTruth,
    x: &Vector,
    u: &Vector,
    dt: f64,
) -> Result<Vector, ModelError> {
    let deriv = |x: &Vector| -> Result<Vector, ModelError> {
        let (f, g) = truth.eval(x)?;
        let mut dx = f;
        dx.axpy(1.0, &g.matvec(u).expect("control dims"));
        Ok(dx)
    };
    let k1 = deriv(x)?;
    let mut x2 = x.clone();
    x2.axpy(0.5 * dt, &k1);
    let k2 = deriv(&x2)?;
    let mut x3 = x.clone();
    x3.axpy(0.5 * dt, &k2);
    let k3 = deriv(&x3)?;
    let mut x4 = x.clone();
    x4.axpy(dt, &k3);
    let k4 = deriv(&x4)?;
    let mut out = x.clone();
    out.axpy(dt / 6.0, &k1);
    out.axpy(dt / 3.0, &k2);
    out.axpy(dt / 3.0, &k3);
    out.axpy(dt / 6.0, &k4);
    Ok(out)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RolloutConfig {
    pub x0: Vector,
    pub dt: f64,
    pub steps: usize,
    pub controller: NominalController,
    /// `None` runs the bare nominal controller.
    pub safety: Option<SafetyLayer>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SafetyLayer {
    pub index: SafetyIndex,
    pub gamma: GammaSpec,
    pub eps_f: f64,
    pub solver: SolverKind,
}

impl Default for RolloutConfig {
    fn default() -> Self {
        Self {
            x0: Vector::zeros(4),
            dt: 0.01,
            steps: 1000,
            controller: NominalController::default(),
            safety: None,
        }
    }
}

/// Everything recorded about one control step.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StepRecord {
    pub t: f64,
    pub state: Vector,
    pub u_ref: f64,
    pub u: f64,
    /// Safety-index value at the step's start (of the layer's index, or
    /// of the bare tilt index when no layer runs).
    pub phi: f64,
    /// Realized `grad . xdot + gamma(phi)` under the held truth; positive
    /// means the step violated the decay constraint.
    pub constraint_residual: f64,
    /// Worst modeled constraint residual reported by the solve, when one ran.
    pub slack: Option<f64>,
    pub status: Option<SolveStatus>,
    /// Risk allocation used by the solve, when one ran.
    pub allocation: Vec<ModeAllocation>,
    pub mode: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RolloutRecord {
    pub steps: Vec<StepRecord>,
    pub max_abs_tilt: f64,
    /// Fraction of steps with positive constraint residual.
    pub violation_freq: f64,
    /// The tilt left `(-pi/2, pi/2)` and integration stopped early.
    pub breached: bool,
}

/// Simulate one rollout. Each step draws a latent truth, computes the
/// reference control, optionally projects it through a safe-control
/// solve against the mixture model, then integrates the held truth.
pub fn rollout<R: Rng>(
    model: &SegwayModel,
    cfg: &RolloutConfig,
    mult_opts: &MultiplicativeOptions,
    policy: &NumericPolicy,
    rng: &mut R,
) -> Result<RolloutRecord, SolveError> {
    let mut x = cfg.x0.clone();
    let mut steps = Vec::with_capacity(cfg.steps);
    let mut max_abs_tilt = cfg.x0[IDX_PHI].abs();
    let mut violations = 0usize;
    let mut breached = false;

    for step in 0..cfg.steps {
        let truth = model.sample_truth(rng)?;
        let u_ref = cfg.controller.control(&x, model.control_dim());
        let (u, status, slack, allocation) = match &cfg.safety {
            None => (model.bounds().clip(&u_ref), None, None, Vec::new()),
            Some(layer) => {
                let res = match layer.solver {
                    SolverKind::Additive => {
                        let solve = solve_safe_control_additive(
                            &x,
                            &u_ref,
                            model,
                            &layer.index,
                            &layer.gamma,
                            layer.eps_f,
                            &mult_opts.additive,
                            policy,
                        );
                        match solve {
                            Ok(res) => res,
                            // The budget is unreachable at this state even
                            // at the k cap: apply the best achievable
                            // allocation instead and mark the step
                            // infeasible-relaxed rather than aborting the
                            // rollout.
                            Err(SolveError::BracketExhausted { achieved, .. }) => {
                                let eps_retry = 1.0 - achieved * (1.0 - 1e-9);
                                let mut res = solve_safe_control_additive(
                                    &x,
                                    &u_ref,
                                    model,
                                    &layer.index,
                                    &layer.gamma,
                                    eps_retry,
                                    &mult_opts.additive,
                                    policy,
                                )?;
                                res.status = SolveStatus::InfeasibleRelaxed;
                                res
                            }
                            Err(e) => return Err(e),
                        }
                    }
                    SolverKind::Multiplicative => bilevel_solve(
                        &x,
                        &u_ref,
                        model,
                        &layer.index,
                        &layer.gamma,
                        layer.eps_f,
                        mult_opts,
                        policy,
                    )?,
                };
                (res.u, Some(res.status), Some(res.slack), res.allocation)
            }
        };

        // Realized decay margin under the held truth.
        let (index, gamma) = match &cfg.safety {
            Some(layer) => (layer.index, layer.gamma),
            None => (
                SafetyIndex::tilt_only(0.1),
                GammaSpec::default(),
            ),
        };
        let phi_val = index.value(&x);
        let grad = index.gradient(&x);
        let (f_true, g_true) = truth.eval(&x)?;
        let mut xdot = f_true.clone();
        xdot.axpy(1.0, &g_true.matvec(&u).expect("control dims"));
        let residual = grad.dot(&xdot) + gamma.eval(phi_val);
        if residual > 0.0 {
            violations += 1;
        }

        steps.push(StepRecord {
            t: step as f64 * cfg.dt,
            state: x.clone(),
            u_ref: u_ref[0],
            u: u[0],
            phi: phi_val,
            constraint_residual: residual,
            slack,
            status,
            allocation,
            mode: truth.mode(),
        });

        x = rk4_step(&truth, &x, &u, cfg.dt)?;
        max_abs_tilt = max_abs_tilt.max(x[IDX_PHI].abs());
        if x[IDX_PHI].abs() >= std::f64::consts::FRAC_PI_2 {
            breached = true;
            break;
        }
    }

    let total = steps.len().max(1);
    Ok(RolloutRecord {
        steps,
        max_abs_tilt,
        violation_freq: violations as f64 / total as f64,
        breached,
    })
}

/// Moment-matched single-Gaussian wrapper: every state's mixture is
/// collapsed to one mode carrying the mixture mean and covariance
/// (within-mode covariance plus between-mode spread). This is the
/// uni-modal baseline a mixture-blind design would use.
pub struct UniModal<'a, M: DynamicsModel> {
    inner: &'a M,
}

pub fn baseline_unimodal<M: DynamicsModel>(model: &M) -> UniModal<'_, M> {
    UniModal { inner: model }
}

impl<M: DynamicsModel> DynamicsModel for UniModal<'_, M> {
    fn state_dim(&self) -> usize {
        self.inner.state_dim()
    }
    fn control_dim(&self) -> usize {
        self.inner.control_dim()
    }
    fn modes_at(&self, x: &Vector) -> Result<Vec<ModeParams>, ModelError> {
        let modes = self.inner.modes_at(x)?;
        let (mu_f, sigma_f) = mixture_f_moments(&modes);
        // A mixture of modes sharing one deterministic control matrix is
        // itself deterministic in g; reusing the shared matrix avoids the
        // rounding residue a weighted re-sum would leave in the spread.
        let same_mu_g = |a: &ModeParams, b: &ModeParams| {
            a.mu_g.rows() == b.mu_g.rows()
                && a.mu_g.cols() == b.mu_g.cols()
                && (0..a.mu_g.rows()).all(|i| {
                    (0..a.mu_g.cols()).all(|j| a.mu_g.at(i, j) == b.mu_g.at(i, j))
                })
        };
        let shared_g = modes
            .iter()
            .all(|m| m.sigma_g.is_zero() && same_mu_g(m, &modes[0]));
        let (mu_g, sigma_g) = if shared_g {
            let g = modes[0].mu_g.clone();
            let zero = GCovariance::zero(g.rows(), g.cols());
            (g, zero)
        } else {
            mixture_g_moments(&modes)
        };
        Ok(vec![ModeParams {
            weight: 1.0,
            mu_f,
            sigma_f,
            mu_g,
            sigma_g,
        }])
    }
    fn bounds(&self) -> &ControlBounds {
        self.inner.bounds()
    }
}

/// Feasible-control interval sizes at one probe state.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FeasibleSetReport {
    pub state: Vector,
    /// Measure of feasible controls under the multi-modal constraints.
    pub multi_modal_interval: f64,
    /// Measure under the moment-matched uni-modal constraints.
    pub uni_modal_interval: f64,
    /// Constant term of the tightest instantiated multi-modal constraint
    /// (halfspace offset, or smallest cone constant). NaN when infeasible.
    pub rhs_multi: f64,
    /// Same for the uni-modal baseline.
    pub rhs_uni: f64,
}

/// Compare the feasible control sets of the multi-modal model and its
/// uni-modal moment-matched baseline at the given probe states, by
/// sweeping `sweep_points` controls across the box (single-control models
/// only) and measuring where the solved constraints hold.
///
/// For each probe the constraints are instantiated at the allocation the
/// corresponding solver returns (risk-equalizing for additive models,
/// face-projected initial allocation refined by descent for
/// multiplicative ones); the uni-modal baseline has a single mode whose
/// allocation is forced to `p = 1 - eps_f`.
pub fn compare_feasible_sets(
    model: &SegwayModel,
    index: &SafetyIndex,
    gamma: &GammaSpec,
    eps_f: f64,
    probes: &[Vector],
    sweep_points: usize,
    mult_opts: &MultiplicativeOptions,
    policy: &NumericPolicy,
) -> Result<Vec<FeasibleSetReport>, SolveError> {
    let bounds = model.bounds();
    if bounds.dim() != 1 {
        return Err(SolveError::Socp(
            "feasible-set sweep requires a single control channel".to_string(),
        ));
    }
    let uni = baseline_unimodal(model);
    let kind = match model {
        SegwayModel::Additive { .. } => SolverKind::Additive,
        SegwayModel::Multiplicative { .. } => SolverKind::Multiplicative,
    };
    probes
        .iter()
        .map(|x| {
            let (multi_modal_interval, rhs_multi) = feasible_measure(
                model, x, index, gamma, eps_f, kind, sweep_points, mult_opts, policy,
            )?;
            let (uni_modal_interval, rhs_uni) = feasible_measure(
                &uni, x, index, gamma, eps_f, kind, sweep_points, mult_opts, policy,
            )?;
            Ok(FeasibleSetReport {
                state: x.clone(),
                multi_modal_interval,
                uni_modal_interval,
                rhs_multi,
                rhs_uni,
            })
        })
        .collect()
}

#[allow(clippy::too_many_arguments)]
fn feasible_measure<M: DynamicsModel>(
    model: &M,
    x: &Vector,
    index: &SafetyIndex,
    gamma: &GammaSpec,
    eps_f: f64,
    kind: SolverKind,
    sweep_points: usize,
    mult_opts: &MultiplicativeOptions,
    policy: &NumericPolicy,
) -> Result<(f64, f64), SolveError> {
    let bounds = model.bounds();
    let lo = bounds.lower()[0];
    let hi = bounds.upper()[0];
    let span = hi - lo;
    let u_at = |i: usize| lo + span * (i as f64 + 0.5) / sweep_points as f64;

    // A membership test for "u is feasible" at this state, plus the
    // constant term of the tightest instantiated constraint.
    let (feasible_at, rhs): (Box<dyn Fn(f64) -> bool + Sync>, f64) = match kind {
        SolverKind::Additive => {
            let grad = index.gradient(x);
            let gamma_val = gamma.eval(index.value(x));
            let modes = model.modes_at(x)?;
            match crate::solver::binary_search_allocation(
                &modes,
                &grad,
                gamma_val,
                eps_f,
                &mult_opts.additive,
                policy,
            ) {
                Ok(constraint) => {
                    let a0 = constraint.a[0];
                    let b = constraint.b;
                    (Box::new(move |u: f64| a0 * u <= b), b)
                }
                Err(SolveError::BracketExhausted { .. }) => (Box::new(|_| false), f64::NAN),
                Err(e) => return Err(e),
            }
        }
        SolverKind::Multiplicative => {
            let res = bilevel_solve(
                x,
                &bounds.center(),
                model,
                index,
                gamma,
                eps_f,
                mult_opts,
                policy,
            )?;
            if res.status == SolveStatus::InfeasibleRelaxed {
                (Box::new(|_| false), f64::NAN)
            } else {
                let grad = index.gradient(x);
                let gamma_val = gamma.eval(index.value(x));
                let modes = model.modes_at(x)?;
                let cones: Vec<_> = modes
                    .iter()
                    .zip(res.allocation.iter())
                    .map(|(mode, alloc)| {
                        crate::solver::build_soc_constraint(mode, alloc.p, &grad, gamma_val, policy)
                    })
                    .collect::<Result<Vec<_>, _>>()?;
                let rhs = cones.iter().map(|c| c.c).fold(f64::INFINITY, f64::min);
                (
                    Box::new(move |u: f64| {
                        let uv = Vector::new(vec![u]);
                        crate::solver::socp::max_violation(&cones, &uv) <= 0.0
                    }),
                    rhs,
                )
            }
        }
    };

    let hits = exec::map_indexed(sweep_points, |i| usize::from(feasible_at(u_at(i))))
        .into_iter()
        .sum::<usize>();
    Ok((hits as f64 * span / sweep_points as f64, rhs))
}
