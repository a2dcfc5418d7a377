//! Sampling-based feasibility certification.
//!
//! A state is *feasible* for a given index, margin, and budget when the
//! corresponding safe-control problem admits a solution in the control
//! box. Sampling states and counting feasible/infeasible outcomes yields
//! a Beta posterior over the underlying feasible fraction `z`; the
//! certificate reports `P(z >= z_target | data)` under a `Beta(alpha,
//! beta)` prior.

use crate::exec;
use crate::mathkit::{self, MathError, NumericPolicy, Vector};
use crate::model::{DynamicsModel, ModelError, SegwayModel};
use crate::safety::{GammaSpec, SafetyIndex};
use crate::sim::{rollout, NominalController, RolloutConfig};
use crate::solver::{
    binary_search_allocation, multiplicative_state_feasible, MultiplicativeOptions, SolveError,
};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CertError {
    #[error("solver error while certifying: {0}")]
    Solve(#[from] SolveError),
    #[error("model error while certifying: {0}")]
    Model(#[from] ModelError),
    #[error("math error while certifying: {0}")]
    Math(#[from] MathError),
    #[error("invalid sampling plan: {0}")]
    BadPlan(String),
}

/// Which solver decides feasibility.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverKind {
    Additive,
    Multiplicative,
}

/// Axis-aligned box in state space; degenerate axes (lower = upper) pin
/// the coordinate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateRegion {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl StateRegion {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self, CertError> {
        if lower.len() != upper.len() {
            return Err(CertError::BadPlan("region bounds lengths differ".into()));
        }
        if lower
            .iter()
            .zip(&upper)
            .any(|(l, u)| !l.is_finite() || !u.is_finite() || l > u)
        {
            return Err(CertError::BadPlan(
                "region needs finite lower <= upper per axis".into(),
            ));
        }
        Ok(Self { lower, upper })
    }

    /// The default certification region: position free (pinned to 0, the
    /// dynamics do not depend on it), tilt within twice its limit, speeds
    /// within 3.
    pub fn segway_default() -> Self {
        Self {
            lower: vec![0.0, -0.2, -3.0, -3.0],
            upper: vec![0.0, 0.2, 3.0, 3.0],
        }
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> Vector {
        Vector::new(
            self.lower
                .iter()
                .zip(&self.upper)
                .map(|(&l, &u)| if l == u { l } else { rng.random_range(l..u) })
                .collect(),
        )
    }
}

/// How certification states are drawn.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SamplePlan {
    /// `n` independent uniform draws from the region.
    UniformRegion { region: StateRegion, n: usize },
    /// States visited by nominal-controller rollouts: `n_rollouts` starts
    /// drawn uniformly from the region, each integrated for
    /// `steps_per_rollout` steps of `dt`, recording every visited state.
    Trajectory {
        region: StateRegion,
        n_rollouts: usize,
        steps_per_rollout: usize,
        dt: f64,
        controller: NominalController,
    },
}

impl SamplePlan {
    pub fn total_states(&self) -> usize {
        match self {
            SamplePlan::UniformRegion { n, .. } => *n,
            SamplePlan::Trajectory {
                n_rollouts,
                steps_per_rollout,
                ..
            } => n_rollouts * steps_per_rollout,
        }
    }
}

/// One certification sample.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SampleOutcome {
    pub state: Vector,
    pub feasible: bool,
}

/// Beta-posterior certificate over the feasible fraction.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FeasibilityCertificate {
    pub n_feasible: u64,
    pub n_infeasible: u64,
    pub prior_alpha: f64,
    pub prior_beta: f64,
    /// The certified level: the certificate bounds `P(z >= z_target)`.
    pub z_target: f64,
    /// `P(z >= z_target | data)` under the Beta posterior.
    pub confidence: f64,
}

impl FeasibilityCertificate {
    pub fn new(
        n_feasible: u64,
        n_infeasible: u64,
        prior_alpha: f64,
        prior_beta: f64,
        z_target: f64,
    ) -> Result<Self, MathError> {
        let confidence = prob_at_least(z_target, n_feasible, n_infeasible, prior_alpha, prior_beta)?;
        Ok(Self {
            n_feasible,
            n_infeasible,
            prior_alpha,
            prior_beta,
            z_target,
            confidence,
        })
    }
}

/// Beta posterior density over the feasible fraction after observing
/// `n_f` feasible and `n_n` infeasible samples:
/// `z^(n_f + alpha - 1) (1 - z)^(n_n + beta - 1) / B(n_f + alpha, n_n + beta)`.
pub fn posterior_density(
    z: f64,
    n_f: u64,
    n_n: u64,
    alpha: f64,
    beta: f64,
) -> Result<f64, MathError> {
    if !(0.0..=1.0).contains(&z) || !(alpha > 0.0) || !(beta > 0.0) {
        return Err(MathError::Domain(format!(
            "posterior_density(z={z}, alpha={alpha}, beta={beta})"
        )));
    }
    let a = n_f as f64 + alpha;
    let b = n_n as f64 + beta;
    let ea = a - 1.0;
    let eb = b - 1.0;
    if z == 0.0 {
        return Ok(match ea {
            e if e > 0.0 => 0.0,
            e if e == 0.0 => (-mathkit::ln_beta(a, b)).exp() * (1.0f64).powf(eb),
            _ => f64::INFINITY,
        });
    }
    if z == 1.0 {
        return Ok(match eb {
            e if e > 0.0 => 0.0,
            e if e == 0.0 => (-mathkit::ln_beta(a, b)).exp(),
            _ => f64::INFINITY,
        });
    }
    Ok((ea * z.ln() + eb * (1.0 - z).ln() - mathkit::ln_beta(a, b)).exp())
}

/// Posterior probability that the feasible fraction is at least `z`:
/// `1 - I_z(n_f + alpha, n_n + beta)`.
pub fn prob_at_least(z: f64, n_f: u64, n_n: u64, alpha: f64, beta: f64) -> Result<f64, MathError> {
    if !(0.0..=1.0).contains(&z) || !(alpha > 0.0) || !(beta > 0.0) {
        return Err(MathError::Domain(format!(
            "prob_at_least(z={z}, alpha={alpha}, beta={beta})"
        )));
    }
    Ok(1.0 - mathkit::reg_inc_beta(z, n_f as f64 + alpha, n_n as f64 + beta)?)
}

/// Decide feasibility of one state without solving for a control.
///
/// Additive: the risk-allocation search either produces a halfspace
/// (feasible iff its best box vertex satisfies it) or exhausts the
/// bracket. Multiplicative: the staged check of
/// [`multiplicative_state_feasible`]. Both reproduce the status the full
/// solver would report, skipping the projection/descent work.
pub fn state_is_feasible<M: crate::model::DynamicsModel>(
    x: &Vector,
    model: &M,
    index: &SafetyIndex,
    gamma: &GammaSpec,
    eps_f: f64,
    kind: SolverKind,
    opts: &MultiplicativeOptions,
    policy: &NumericPolicy,
) -> Result<bool, SolveError> {
    match kind {
        SolverKind::Additive => {
            let modes = model.modes_at(x)?;
            let grad = index.gradient(x);
            let gamma_val = gamma.eval(index.value(x));
            match binary_search_allocation(&modes, &grad, gamma_val, eps_f, &opts.additive, policy)
            {
                Err(SolveError::BracketExhausted { .. }) => Ok(false),
                Err(e) => Err(e),
                Ok(constraint) => {
                    let bounds = model.bounds();
                    let best: f64 = (0..constraint.a.len())
                        .map(|j| {
                            let aj = constraint.a[j];
                            if aj >= 0.0 {
                                aj * bounds.lower()[j]
                            } else {
                                aj * bounds.upper()[j]
                            }
                        })
                        .sum();
                    Ok(best <= constraint.b)
                }
            }
        }
        SolverKind::Multiplicative => {
            multiplicative_state_feasible(x, model, index, gamma, eps_f, opts, policy)
        }
    }
}

/// Sample states per the plan, decide feasibility of each, and build the
/// certificate. Returns the certificate and the per-sample log.
///
/// Uniform plans evaluate samples independently (index-seeded, so the
/// outcome is deterministic for a given seed regardless of thread count);
/// trajectory plans parallelize over rollouts.
#[allow(clippy::too_many_arguments)]
pub fn sample_feasibility(
    model: &SegwayModel,
    index: &SafetyIndex,
    gamma: &GammaSpec,
    eps_f: f64,
    kind: SolverKind,
    plan: &SamplePlan,
    prior_alpha: f64,
    prior_beta: f64,
    z_target: f64,
    seed: u64,
    opts: &MultiplicativeOptions,
    policy: &NumericPolicy,
) -> Result<(FeasibilityCertificate, Vec<SampleOutcome>), CertError> {
    let states: Vec<Vector> = match plan {
        SamplePlan::UniformRegion { region, n } => {
            if region.lower.len() != model.state_dim() {
                return Err(CertError::BadPlan("region dimension".into()));
            }
            (0..*n)
                .map(|i| {
                    let mut rng = exec::rng_for(seed, i as u64);
                    region.sample(&mut rng)
                })
                .collect()
        }
        SamplePlan::Trajectory {
            region,
            n_rollouts,
            steps_per_rollout,
            dt,
            controller,
        } => {
            if region.lower.len() != model.state_dim() {
                return Err(CertError::BadPlan("region dimension".into()));
            }
            if *dt <= 0.0 {
                return Err(CertError::BadPlan("dt must be positive".into()));
            }
            let rollouts = exec::map_indexed(*n_rollouts, |i| {
                let mut rng = exec::rng_for(seed, i as u64);
                let cfg = RolloutConfig {
                    x0: region.sample(&mut rng),
                    dt: *dt,
                    steps: *steps_per_rollout,
                    controller: *controller,
                    safety: None,
                };
                rollout(model, &cfg, opts, policy, &mut rng)
            });
            let mut states = Vec::with_capacity(n_rollouts * steps_per_rollout);
            for r in rollouts {
                states.extend(r.map_err(CertError::Solve)?.steps.into_iter().map(|s| s.state));
            }
            states
        }
    };

    let outcomes: Vec<Result<SampleOutcome, SolveError>> = exec::map_indexed(states.len(), |i| {
        let state = states[i].clone();
        let feasible = state_is_feasible(&state, model, index, gamma, eps_f, kind, opts, policy)?;
        Ok(SampleOutcome { state, feasible })
    });
    let mut log = Vec::with_capacity(outcomes.len());
    let mut n_feasible = 0u64;
    for outcome in outcomes {
        let outcome = outcome?;
        if outcome.feasible {
            n_feasible += 1;
        }
        log.push(outcome);
    }
    let n_infeasible = log.len() as u64 - n_feasible;
    let certificate =
        FeasibilityCertificate::new(n_feasible, n_infeasible, prior_alpha, prior_beta, z_target)?;
    Ok((certificate, log))
}
