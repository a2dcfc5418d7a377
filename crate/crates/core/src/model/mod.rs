//! Control-affine dynamics with multi-modal Gaussian uncertainty.
//!
//! The plant is `xdot = f(x) + g(x) u` where, conditioned on a latent mode
//! `theta_i` (probability `w_i`), the drift `f` and the control matrix `g`
//! are jointly Gaussian with state-dependent moments. A model exposes those
//! per-mode moments at any state; solvers and samplers build everything
//! else from them.

mod segway;

pub use segway::{
    reference_additive_modes, reference_km_modes, segway_additive_model,
    segway_km_decomposition, segway_multiplicative_model, segway_nominal, AdditiveSegwayMode,
    KmMode, SegwayModel, SegwayParams, SegwayTruth, IDX_DP, IDX_DPHI, IDX_P, IDX_PHI,
};

use crate::mathkit::{self, Matrix, MathError, NumericPolicy, Vector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("mode weights must be positive and sum to 1 (got sum {0})")]
    BadWeights(f64),
    #[error("model has no modes")]
    NoModes,
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("mass matrix is singular at this state (det = {det:.3e})")]
    SingularMass { det: f64 },
    #[error("covariance invalid: {0}")]
    BadCovariance(#[from] MathError),
    #[error("control bounds invalid: {0}")]
    BadBounds(String),
}

/// Box bounds on the control vector, `lower[j] <= u[j] <= upper[j]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlBounds {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl ControlBounds {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self, ModelError> {
        if lower.len() != upper.len() {
            return Err(ModelError::BadBounds(
                "lower/upper lengths differ".to_string(),
            ));
        }
        for (l, u) in lower.iter().zip(upper.iter()) {
            if !(l.is_finite() && u.is_finite() && l <= u) {
                return Err(ModelError::BadBounds(format!(
                    "need finite lower <= upper, got [{l}, {u}]"
                )));
            }
        }
        Ok(Self { lower, upper })
    }

    /// Symmetric box `[-limit, limit]^m`.
    pub fn symmetric(m: usize, limit: f64) -> Result<Self, ModelError> {
        Self::new(vec![-limit; m], vec![limit; m])
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn clip(&self, u: &Vector) -> Vector {
        debug_assert_eq!(u.len(), self.dim());
        Vector::new(
            u.iter()
                .enumerate()
                .map(|(j, &v)| v.clamp(self.lower[j], self.upper[j]))
                .collect(),
        )
    }

    pub fn contains(&self, u: &Vector, tol: f64) -> bool {
        u.len() == self.dim()
            && u.iter()
                .enumerate()
                .all(|(j, &v)| v >= self.lower[j] - tol && v <= self.upper[j] + tol)
    }

    /// Center of the box.
    pub fn center(&self) -> Vector {
        Vector::new(
            self.lower
                .iter()
                .zip(self.upper.iter())
                .map(|(l, u)| 0.5 * (l + u))
                .collect(),
        )
    }
}

/// Covariance of the control matrix `g` (an `n x m` random matrix), stored
/// as the covariance of the column-stacked vector `vec(g)`; entry block
/// `(j, l)` couples column `j` with column `l`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GCovariance {
    n: usize,
    m: usize,
    /// `(n*m) x (n*m)` PSD covariance of vec(g), columns stacked.
    vec_cov: Matrix,
}

impl GCovariance {
    pub fn zero(n: usize, m: usize) -> Self {
        Self {
            n,
            m,
            vec_cov: Matrix::zeros(n * m, n * m),
        }
    }

    pub fn from_vec_cov(n: usize, m: usize, vec_cov: Matrix) -> Result<Self, ModelError> {
        if vec_cov.rows() != n * m || vec_cov.cols() != n * m {
            return Err(ModelError::Dimension(format!(
                "g covariance must be {0}x{0}, got {1}x{2}",
                n * m,
                vec_cov.rows(),
                vec_cov.cols()
            )));
        }
        Ok(Self { n, m, vec_cov })
    }

    /// Covariance for a single-column `g` (`m = 1`).
    pub fn from_single_column(cov: Matrix) -> Result<Self, ModelError> {
        let n = cov.rows();
        Self::from_vec_cov(n, 1, cov)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn vec_cov(&self) -> &Matrix {
        &self.vec_cov
    }

    pub fn is_zero(&self) -> bool {
        self.vec_cov.max_abs() == 0.0
    }

    /// The `m x m` covariance of the projected vector `g^T grad`, whose
    /// `(j, l)` entry is `grad^T Cov(g_:j, g_:l) grad`.
    pub fn projected(&self, grad: &Vector) -> Result<Matrix, MathError> {
        if grad.len() != self.n {
            return Err(MathError::Dimension(format!(
                "projected: gradient length {} vs state dim {}",
                grad.len(),
                self.n
            )));
        }
        let mut q = Matrix::zeros(self.m, self.m);
        for j in 0..self.m {
            for l in 0..self.m {
                let mut s = 0.0;
                for a in 0..self.n {
                    for b in 0..self.n {
                        s += grad[a] * grad[b] * self.vec_cov.at(j * self.n + a, l * self.n + b);
                    }
                }
                q.set(j, l, s);
            }
        }
        Ok(q)
    }
}

/// Moments of one mixture mode at a fixed state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeParams {
    /// Mode probability `w_i`.
    pub weight: f64,
    /// Mean drift, length `n`.
    pub mu_f: Vector,
    /// Drift covariance, `n x n` PSD.
    pub sigma_f: Matrix,
    /// Mean control matrix, `n x m`.
    pub mu_g: Matrix,
    /// Covariance of the control matrix.
    pub sigma_g: GCovariance,
}

impl ModeParams {
    pub fn validate(&self, policy: &NumericPolicy) -> Result<(), ModelError> {
        let n = self.mu_f.len();
        if self.sigma_f.rows() != n || self.sigma_f.cols() != n {
            return Err(ModelError::Dimension("sigma_f shape".into()));
        }
        if self.mu_g.rows() != n {
            return Err(ModelError::Dimension("mu_g rows".into()));
        }
        if self.sigma_g.n() != n || self.sigma_g.m() != self.mu_g.cols() {
            return Err(ModelError::Dimension("sigma_g shape".into()));
        }
        if !(self.weight > 0.0 && self.weight <= 1.0) {
            return Err(ModelError::BadWeights(self.weight));
        }
        mathkit::cholesky(&self.sigma_f, policy)?;
        mathkit::cholesky(self.sigma_g.vec_cov(), policy)?;
        Ok(())
    }
}

/// Validate a full mode list: shapes, PSD covariances, weights summing to 1.
pub fn validate_modes(modes: &[ModeParams], policy: &NumericPolicy) -> Result<(), ModelError> {
    if modes.is_empty() {
        return Err(ModelError::NoModes);
    }
    for mode in modes {
        mode.validate(policy)?;
    }
    let sum: f64 = modes.iter().map(|m| m.weight).sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(ModelError::BadWeights(sum));
    }
    Ok(())
}

/// A control-affine plant with multi-modal Gaussian uncertainty.
pub trait DynamicsModel {
    fn state_dim(&self) -> usize;
    fn control_dim(&self) -> usize;
    /// Per-mode moments of `(f, g)` at state `x`.
    fn modes_at(&self, x: &Vector) -> Result<Vec<ModeParams>, ModelError>;
    fn bounds(&self) -> &ControlBounds;
}

/// Draws `(f, g, mode)` from the mixture at a fixed state. Prepares the
/// Cholesky factors once so repeated draws are cheap.
pub struct ModeSampler {
    modes: Vec<PreparedMode>,
}

struct PreparedMode {
    weight: f64,
    mu_f: Vector,
    l_f: Matrix,
    mu_g: Matrix,
    /// Factor of the vec(g) covariance; `None` when g is deterministic.
    l_g: Option<Matrix>,
    n: usize,
    m: usize,
}

impl ModeSampler {
    pub fn new(modes: &[ModeParams], policy: &NumericPolicy) -> Result<Self, ModelError> {
        validate_modes(modes, policy)?;
        let prepared = modes
            .iter()
            .map(|mode| {
                let l_f = mathkit::cholesky(&mode.sigma_f, policy)?;
                let l_g = if mode.sigma_g.is_zero() {
                    None
                } else {
                    Some(mathkit::cholesky(mode.sigma_g.vec_cov(), policy)?)
                };
                Ok(PreparedMode {
                    weight: mode.weight,
                    mu_f: mode.mu_f.clone(),
                    l_f,
                    mu_g: mode.mu_g.clone(),
                    l_g,
                    n: mode.mu_f.len(),
                    m: mode.mu_g.cols(),
                })
            })
            .collect::<Result<Vec<_>, ModelError>>()?;
        Ok(Self { modes: prepared })
    }

    /// One joint draw of the dynamics: latent mode, then `(f, g)` from that
    /// mode's Gaussian.
    pub fn sample<R: Rng>(&self, rng: &mut R) -> (Vector, Matrix, usize) {
        let idx = self.sample_mode(rng);
        let mode = &self.modes[idx];
        let f = gaussian_draw(&mode.mu_f, &mode.l_f, rng);
        let g = match &mode.l_g {
            None => mode.mu_g.clone(),
            Some(l_g) => {
                let mu_vec = stack_columns(&mode.mu_g);
                let v = gaussian_draw(&mu_vec, l_g, rng);
                unstack_columns(&v, mode.n, mode.m)
            }
        };
        (f, g, idx)
    }

    pub fn sample_mode<R: Rng>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.random();
        let mut cum = 0.0;
        for (i, mode) in self.modes.iter().enumerate() {
            cum += mode.weight;
            if u < cum {
                return i;
            }
        }
        self.modes.len() - 1
    }
}

/// One draw from `N(mu, L L^T)`.
pub fn gaussian_draw<R: Rng>(mu: &Vector, l: &Matrix, rng: &mut R) -> Vector {
    let n = mu.len();
    let z = Vector::new((0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect());
    let mut out = mu.clone();
    for i in 0..n {
        let mut s = 0.0;
        for j in 0..=i {
            s += l.at(i, j) * z[j];
        }
        out[i] += s;
    }
    out
}

/// Column-stack an `n x m` matrix into a length `n*m` vector.
pub fn stack_columns(m: &Matrix) -> Vector {
    let mut v = Vector::zeros(m.rows() * m.cols());
    for j in 0..m.cols() {
        for i in 0..m.rows() {
            v[j * m.rows() + i] = m.at(i, j);
        }
    }
    v
}

/// Inverse of [`stack_columns`].
pub fn unstack_columns(v: &Vector, n: usize, m: usize) -> Matrix {
    debug_assert_eq!(v.len(), n * m);
    let mut out = Matrix::zeros(n, m);
    for j in 0..m {
        for i in 0..n {
            out.set(i, j, v[j * n + i]);
        }
    }
    out
}

/// Convenience one-shot draw from a model's mixture at state `x`.
pub fn sample_dynamics<M: DynamicsModel, R: Rng>(
    model: &M,
    x: &Vector,
    policy: &NumericPolicy,
    rng: &mut R,
) -> Result<(Vector, Matrix, usize), ModelError> {
    let modes = model.modes_at(x)?;
    let sampler = ModeSampler::new(&modes, policy)?;
    Ok(sampler.sample(rng))
}

/// Mixture mean and covariance of the drift `f` implied by a mode list:
/// `mu = sum w_i mu_i`, `Sigma = sum w_i (Sigma_i + (mu_i - mu)(mu_i - mu)^T)`.
///
/// This is the moment-matched single Gaussian a uni-modal baseline would
/// fit to the same mixture.
pub fn mixture_f_moments(modes: &[ModeParams]) -> (Vector, Matrix) {
    let n = modes[0].mu_f.len();
    let mut mu = Vector::zeros(n);
    for mode in modes {
        mu.axpy(mode.weight, &mode.mu_f);
    }
    let mut sigma = Matrix::zeros(n, n);
    for mode in modes {
        let d = mode.mu_f.sub(&mu);
        sigma = sigma.add(&mode.sigma_f.scaled(mode.weight));
        sigma = sigma.add(&Matrix::outer(&d, &d).scaled(mode.weight));
    }
    (mu, sigma)
}

/// Mixture moments of vec(g), analogous to [`mixture_f_moments`].
pub fn mixture_g_moments(modes: &[ModeParams]) -> (Matrix, GCovariance) {
    let n = modes[0].mu_g.rows();
    let m = modes[0].mu_g.cols();
    let mut mu_vec = Vector::zeros(n * m);
    for mode in modes {
        mu_vec.axpy(mode.weight, &stack_columns(&mode.mu_g));
    }
    let mut cov = Matrix::zeros(n * m, n * m);
    for mode in modes {
        let d = stack_columns(&mode.mu_g).sub(&mu_vec);
        cov = cov.add(&mode.sigma_g.vec_cov().scaled(mode.weight));
        cov = cov.add(&Matrix::outer(&d, &d).scaled(mode.weight));
    }
    let mu_g = unstack_columns(&mu_vec, n, m);
    (
        mu_g,
        GCovariance::from_vec_cov(n, m, cov).expect("shapes match by construction"),
    )
}
