//! Planar Segway (wheeled inverted pendulum) dynamics and its two
//! uncertainty models: additive drift disturbance and random motor
//! constant.
//!
//! State layout: `x = [p, phi, pdot, phidot]` with `p` the wheel position,
//! `phi` the frame tilt (zero upright, positive forward). The generalized
//! coordinates are `q = [p, phi]`, and the plant is
//!
//! ```text
//! M(q) qddot + H(q, qdot) = B u,
//! M = [[m0, mL cos phi], [mL cos phi, J0]],
//! H = [-mL sin(phi) phidot^2 + (bt/R)(pdot - R phidot),
//!      -mL grav sin(phi)     -  bt   (pdot - R phidot)],
//! B = [Km / R, -Km]^T,     bt = Km Kb / R,
//! ```
//!
//! where `m0` lumps the total translational inertia, `J0` the frame
//! rotational inertia, and `mL` the frame mass times the center-of-mass
//! height. The motor constant `Km` enters the input matrix and, through
//! `bt`, the back-EMF damping, so both `f` and `g` are affine in `Km`;
//! [`segway_km_decomposition`] exposes that structure for the
//! multiplicative-uncertainty model.

use super::{
    ControlBounds, DynamicsModel, GCovariance, ModeParams, ModelError, stack_columns,
    validate_modes,
};
use crate::mathkit::{Matrix, NumericPolicy, Vector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

pub const IDX_P: usize = 0;
pub const IDX_PHI: usize = 1;
pub const IDX_DP: usize = 2;
pub const IDX_DPHI: usize = 3;

/// Physical constants of the Segway plant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SegwayParams {
    /// Total translational inertia (kg).
    pub m0: f64,
    /// Frame rotational inertia (kg m^2).
    pub j0: f64,
    /// Frame mass times center-of-mass height (kg m).
    pub m_l: f64,
    /// Wheel radius (m).
    pub r_wheel: f64,
    /// Motor torque constant (nominal).
    pub k_m: f64,
    /// Back-EMF constant.
    pub k_b: f64,
    /// Gravitational acceleration (m/s^2).
    pub grav: f64,
}

impl Default for SegwayParams {
    fn default() -> Self {
        Self {
            m0: 52.7,
            j0: 5.2,
            m_l: 9.3,
            r_wheel: 0.195,
            k_m: 2.524,
            k_b: 0.189,
            grav: 9.81,
        }
    }
}

/// Drift and input matrix of the nominal plant (motor constant at its
/// nominal value, no disturbance): `f(x)` length 4, `g(x)` of shape 4x1.
pub fn segway_nominal(
    x: &Vector,
    params: &SegwayParams,
    policy: &NumericPolicy,
) -> Result<(Vector, Matrix), ModelError> {
    let (f0, f1, gdir) = segway_km_decomposition(x, params, policy)?;
    let mut f = f0;
    f.axpy(params.k_m, &f1);
    let g = gdir.scaled(params.k_m);
    Ok((f, g))
}

/// Decomposition of the Segway dynamics in the motor constant `Km`:
/// `f(x; Km) = f0(x) + Km f1(x)` and `g(x; Km) = Km gdir(x)`.
///
/// `f1` carries the back-EMF damping (`bt = Km Kb / R`); `gdir` is the
/// input direction per unit motor constant.
pub fn segway_km_decomposition(
    x: &Vector,
    params: &SegwayParams,
    policy: &NumericPolicy,
) -> Result<(Vector, Vector, Matrix), ModelError> {
    if x.len() != 4 {
        return Err(ModelError::Dimension(format!(
            "segway state must have length 4, got {}",
            x.len()
        )));
    }
    let phi = x[IDX_PHI];
    let dp = x[IDX_DP];
    let dphi = x[IDX_DPHI];
    let (sin_phi, cos_phi) = phi.sin_cos();

    let c = params.m_l * cos_phi;
    let det = params.m0 * params.j0 - c * c;
    if det.abs() < policy.singular_tol {
        return Err(ModelError::SingularMass { det });
    }
    // Explicit 2x2 inverse of the mass matrix.
    let inv00 = params.j0 / det;
    let inv01 = -c / det;
    let inv11 = params.m0 / det;

    // Km-independent part of H.
    let h0 = [
        -params.m_l * sin_phi * dphi * dphi,
        -params.m_l * params.grav * sin_phi,
    ];
    // Per-unit-Km part: bt = Km Kb / R multiplies (pdot - R phidot).
    let slip = dp - params.r_wheel * dphi;
    let h1 = [
        params.k_b / (params.r_wheel * params.r_wheel) * slip,
        -params.k_b / params.r_wheel * slip,
    ];
    // Per-unit-Km input direction.
    let b1 = [1.0 / params.r_wheel, -1.0];

    let minv = |v: &[f64; 2]| [inv00 * v[0] + inv01 * v[1], inv01 * v[0] + inv11 * v[1]];
    let a0 = minv(&h0);
    let a1 = minv(&h1);
    let bg = minv(&b1);

    let f0 = Vector::new(vec![dp, dphi, -a0[0], -a0[1]]);
    let f1 = Vector::new(vec![0.0, 0.0, -a1[0], -a1[1]]);
    let mut gdir = Matrix::zeros(4, 1);
    gdir.set(IDX_DP, 0, bg[0]);
    gdir.set(IDX_DPHI, 0, bg[1]);
    Ok((f0, f1, gdir))
}

/// One mode of the additive-disturbance model: `xdot = f(x) + d + g(x) u`
/// with `d ~ N(mu_d, sigma_d)` given the mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdditiveSegwayMode {
    pub weight: f64,
    pub mu_d: Vector,
    pub sigma_d: Matrix,
}

/// One mode of the motor-constant model: `Km ~ N(mean, std^2)` given the
/// mode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KmMode {
    pub weight: f64,
    pub mean: f64,
    pub std: f64,
}

/// Segway with either additive or motor-constant uncertainty.
#[derive(Debug, Clone)]
pub enum SegwayModel {
    Additive {
        params: SegwayParams,
        modes: Vec<AdditiveSegwayMode>,
        bounds: ControlBounds,
        policy: NumericPolicy,
    },
    Multiplicative {
        params: SegwayParams,
        modes: Vec<KmMode>,
        bounds: ControlBounds,
        policy: NumericPolicy,
    },
}

/// Build and validate the additive-disturbance Segway model.
pub fn segway_additive_model(
    params: SegwayParams,
    modes: Vec<AdditiveSegwayMode>,
    bounds: ControlBounds,
    policy: NumericPolicy,
) -> Result<SegwayModel, ModelError> {
    if bounds.dim() != 1 {
        return Err(ModelError::BadBounds(
            "segway control dimension is 1".to_string(),
        ));
    }
    let model = SegwayModel::Additive {
        params,
        modes,
        bounds,
        policy,
    };
    // Mode moments are state independent up to the nominal shift, so
    // validating at the origin validates everywhere.
    validate_modes(&model.modes_at(&Vector::zeros(4))?, &policy)?;
    Ok(model)
}

/// Build and validate the motor-constant Segway model.
pub fn segway_multiplicative_model(
    params: SegwayParams,
    modes: Vec<KmMode>,
    bounds: ControlBounds,
    policy: NumericPolicy,
) -> Result<SegwayModel, ModelError> {
    if bounds.dim() != 1 {
        return Err(ModelError::BadBounds(
            "segway control dimension is 1".to_string(),
        ));
    }
    for mode in &modes {
        if !(mode.std >= 0.0 && mode.std.is_finite() && mode.mean.is_finite()) {
            return Err(ModelError::Dimension(
                "motor-constant mode needs finite mean and std >= 0".to_string(),
            ));
        }
    }
    let model = SegwayModel::Multiplicative {
        params,
        modes,
        bounds,
        policy,
    };
    validate_modes(&model.modes_at(&Vector::zeros(4))?, &policy)?;
    Ok(model)
}

/// The reference two-mode additive disturbance mixture used by the
/// experiment configs, benchmarks, and acceptance runs: a dominant
/// small-drift mode and a rare mode with a strong downward kick on the
/// tilt rate.
pub fn reference_additive_modes() -> Vec<AdditiveSegwayMode> {
    vec![
        AdditiveSegwayMode {
            weight: 0.8,
            mu_d: Vector::new(vec![0.1, -0.1, 0.1, -0.1]),
            sigma_d: Matrix::from_rows(&[
                vec![0.18, 0.0, 0.0, 0.0],
                vec![0.0, 0.18, 0.0, 0.1],
                vec![0.0, 0.0, 0.18, 0.0],
                vec![0.0, 0.1, 0.0, 0.18],
            ]),
        },
        AdditiveSegwayMode {
            weight: 0.2,
            mu_d: Vector::new(vec![0.1, -0.1, 0.2, -7.0]),
            sigma_d: Matrix::from_rows(&[
                vec![0.1, 0.0, 0.0, 0.0],
                vec![0.0, 0.1, 0.0, -0.05],
                vec![0.0, 0.0, 0.1, 0.0],
                vec![0.0, -0.05, 0.0, 0.1],
            ]),
        },
    ]
}

/// The reference two-mode motor-constant mixture: a tight nominal mode
/// and a rare high-gain mode.
pub fn reference_km_modes() -> Vec<KmMode> {
    vec![
        KmMode {
            weight: 0.8,
            mean: 2.4,
            std: 0.05,
        },
        KmMode {
            weight: 0.2,
            mean: 4.2,
            std: 0.2,
        },
    ]
}

impl DynamicsModel for SegwayModel {
    fn state_dim(&self) -> usize {
        4
    }

    fn control_dim(&self) -> usize {
        1
    }

    fn modes_at(&self, x: &Vector) -> Result<Vec<ModeParams>, ModelError> {
        match self {
            SegwayModel::Additive {
                params,
                modes,
                policy,
                ..
            } => {
                let (f, g) = segway_nominal(x, params, policy)?;
                modes
                    .iter()
                    .map(|mode| {
                        Ok(ModeParams {
                            weight: mode.weight,
                            mu_f: f.add(&mode.mu_d),
                            sigma_f: mode.sigma_d.clone(),
                            mu_g: g.clone(),
                            sigma_g: GCovariance::zero(4, 1),
                        })
                    })
                    .collect()
            }
            SegwayModel::Multiplicative {
                params,
                modes,
                policy,
                ..
            } => {
                let (f0, f1, gdir) = segway_km_decomposition(x, params, policy)?;
                let gvec = stack_columns(&gdir);
                modes
                    .iter()
                    .map(|mode| {
                        let mut mu_f = f0.clone();
                        mu_f.axpy(mode.mean, &f1);
                        let var = mode.std * mode.std;
                        Ok(ModeParams {
                            weight: mode.weight,
                            mu_f,
                            sigma_f: Matrix::outer(&f1, &f1).scaled(var),
                            mu_g: gdir.scaled(mode.mean),
                            sigma_g: GCovariance::from_vec_cov(
                                4,
                                1,
                                Matrix::outer(&gvec, &gvec).scaled(var),
                            )?,
                        })
                    })
                    .collect()
            }
        }
    }

    fn bounds(&self) -> &ControlBounds {
        match self {
            SegwayModel::Additive { bounds, .. } => bounds,
            SegwayModel::Multiplicative { bounds, .. } => bounds,
        }
    }
}

impl SegwayModel {
    pub fn params(&self) -> &SegwayParams {
        match self {
            SegwayModel::Additive { params, .. } => params,
            SegwayModel::Multiplicative { params, .. } => params,
        }
    }

    pub fn policy(&self) -> &NumericPolicy {
        match self {
            SegwayModel::Additive { policy, .. } => policy,
            SegwayModel::Multiplicative { policy, .. } => policy,
        }
    }

    /// Draw one latent realization of the plant: a mode, then the
    /// disturbance vector or motor constant for that mode. The result
    /// evaluates true dynamics at any state, which is what a simulation
    /// holds fixed across an integration step.
    pub fn sample_truth<R: Rng>(&self, rng: &mut R) -> Result<SegwayTruth, ModelError> {
        match self {
            SegwayModel::Additive {
                params,
                modes,
                policy,
                ..
            } => {
                let idx = pick_mode(modes.iter().map(|m| m.weight), rng)?;
                let mode = &modes[idx];
                let l = crate::mathkit::cholesky(&mode.sigma_d, policy)?;
                let d = super::gaussian_draw(&mode.mu_d, &l, rng);
                Ok(SegwayTruth::Additive {
                    params: *params,
                    policy: *policy,
                    d,
                    mode: idx,
                })
            }
            SegwayModel::Multiplicative {
                params,
                modes,
                policy,
                ..
            } => {
                let idx = pick_mode(modes.iter().map(|m| m.weight), rng)?;
                let mode = &modes[idx];
                let z: f64 = rng.sample(StandardNormal);
                Ok(SegwayTruth::Multiplicative {
                    params: *params,
                    policy: *policy,
                    k_m: mode.mean + mode.std * z,
                    mode: idx,
                })
            }
        }
    }
}

fn pick_mode<R: Rng>(weights: impl Iterator<Item = f64>, rng: &mut R) -> Result<usize, ModelError> {
    let w: Vec<f64> = weights.collect();
    if w.is_empty() {
        return Err(ModelError::NoModes);
    }
    let u: f64 = rng.random();
    let mut cum = 0.0;
    for (i, wi) in w.iter().enumerate() {
        cum += wi;
        if u < cum {
            return Ok(i);
        }
    }
    Ok(w.len() - 1)
}

/// A single realized plant: fixed disturbance or fixed motor constant.
#[derive(Debug, Clone)]
pub enum SegwayTruth {
    Additive {
        params: SegwayParams,
        policy: NumericPolicy,
        d: Vector,
        mode: usize,
    },
    Multiplicative {
        params: SegwayParams,
        policy: NumericPolicy,
        k_m: f64,
        mode: usize,
    },
}

impl SegwayTruth {
    /// True `(f, g)` of this realization at state `x`.
    pub fn eval(&self, x: &Vector) -> Result<(Vector, Matrix), ModelError> {
        match self {
            SegwayTruth::Additive {
                params, policy, d, ..
            } => {
                let (f, g) = segway_nominal(x, params, policy)?;
                Ok((f.add(d), g))
            }
            SegwayTruth::Multiplicative {
                params,
                policy,
                k_m,
                ..
            } => {
                let (f0, f1, gdir) = segway_km_decomposition(x, params, policy)?;
                let mut f = f0;
                f.axpy(*k_m, &f1);
                Ok((f, gdir.scaled(*k_m)))
            }
        }
    }

    pub fn mode(&self) -> usize {
        match self {
            SegwayTruth::Additive { mode, .. } => *mode,
            SegwayTruth::Multiplicative { mode, .. } => *mode,
        }
    }
}
