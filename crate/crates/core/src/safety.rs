//! Safety indices over the Segway state and the class-K margin function.
//!
//! The base index is `phi0(x) = |phi| - tilt_limit`: negative while the
//! tilt is inside its limit. Because `phi0` has relative degree two in the
//! tilt dynamics, control enters only through the augmented family
//!
//! ```text
//! phi(x) = max( phi0(x),
//!               -tilt_limit^alpha + |phi|^alpha
//!               + k_v * sign(phi) * phidot + beta )
//! ```
//!
//! whose second branch exposes the tilt rate to the control. A state is
//! kept safe by enforcing `phidot_index <= -gamma(phi)` with `gamma` an
//! extended class-K function (linear here).
//!
//! Conventions: `sign(0) = 0`, and on branch ties the gradient of the
//! second (rate) branch is used.

use crate::mathkit::Vector;
use crate::model::{IDX_DPHI, IDX_PHI};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SafetyError {
    #[error("invalid index parameters: {0}")]
    BadParams(String),
}

/// Parameters of the rate branch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IndexParams {
    /// Exponent on the tilt magnitude, `alpha > 0`.
    pub alpha: f64,
    /// Weight on the tilt rate, `k_v > 0`.
    pub k_v: f64,
    /// Constant margin, `beta >= 0`.
    pub beta: f64,
}

impl IndexParams {
    pub fn validate(&self) -> Result<(), SafetyError> {
        if !(self.alpha.is_finite() && self.alpha > 0.0) {
            return Err(SafetyError::BadParams(format!("alpha = {}", self.alpha)));
        }
        if !(self.k_v.is_finite() && self.k_v > 0.0) {
            return Err(SafetyError::BadParams(format!("k_v = {}", self.k_v)));
        }
        if !(self.beta.is_finite() && self.beta >= 0.0) {
            return Err(SafetyError::BadParams(format!("beta = {}", self.beta)));
        }
        Ok(())
    }
}

/// Which branch of the max defines the index value at a state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum IndexBranch {
    /// `|phi| - tilt_limit`.
    Tilt,
    /// The rate branch (also chosen on exact ties).
    Rate,
}

/// A safety index over the Segway state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum SafetyIndex {
    /// The bare tilt-limit index `phi0`. It ignores the tilt rate, so no
    /// control input can influence its derivative; it exists as the
    /// specification of the safe set and as a baseline.
    TiltOnly { tilt_limit: f64 },
    /// The augmented family used for control.
    Margin {
        tilt_limit: f64,
        params: IndexParams,
    },
}

impl SafetyIndex {
    pub fn tilt_only(tilt_limit: f64) -> Self {
        SafetyIndex::TiltOnly { tilt_limit }
    }

    pub fn with_margin(tilt_limit: f64, params: IndexParams) -> Result<Self, SafetyError> {
        params.validate()?;
        Ok(SafetyIndex::Margin { tilt_limit, params })
    }

    /// The hand-tuned margin index used as a baseline.
    pub fn hand(tilt_limit: f64) -> Self {
        SafetyIndex::Margin {
            tilt_limit,
            params: IndexParams {
                alpha: 1.0,
                k_v: 1.0,
                beta: 0.001,
            },
        }
    }

    pub fn tilt_limit(&self) -> f64 {
        match self {
            SafetyIndex::TiltOnly { tilt_limit } => *tilt_limit,
            SafetyIndex::Margin { tilt_limit, .. } => *tilt_limit,
        }
    }

    /// `phi0(x) = |phi| - tilt_limit`.
    pub fn phi0(&self, x: &Vector) -> f64 {
        x[IDX_PHI].abs() - self.tilt_limit()
    }

    pub fn value(&self, x: &Vector) -> f64 {
        match self {
            SafetyIndex::TiltOnly { .. } => self.phi0(x),
            SafetyIndex::Margin { tilt_limit, params } => {
                let phi = x[IDX_PHI];
                let rate = rate_branch(phi, x[IDX_DPHI], *tilt_limit, params);
                self.phi0(x).max(rate)
            }
        }
    }

    pub fn active_branch(&self, x: &Vector) -> IndexBranch {
        match self {
            SafetyIndex::TiltOnly { .. } => IndexBranch::Tilt,
            SafetyIndex::Margin { tilt_limit, params } => {
                let rate = rate_branch(x[IDX_PHI], x[IDX_DPHI], *tilt_limit, params);
                if self.phi0(x) > rate {
                    IndexBranch::Tilt
                } else {
                    IndexBranch::Rate
                }
            }
        }
    }

    /// Gradient of the active branch with respect to the state.
    ///
    /// Nondifferentiable points (branch ties, `phi = 0`) use the
    /// conventions above: ties resolve to the rate branch and
    /// `sign(0) = 0`.
    pub fn gradient(&self, x: &Vector) -> Vector {
        let mut grad = Vector::zeros(x.len());
        let phi = x[IDX_PHI];
        let s = sign(phi);
        match (self, self.active_branch(x)) {
            (SafetyIndex::TiltOnly { .. }, _) | (_, IndexBranch::Tilt) => {
                grad[IDX_PHI] = s;
            }
            (SafetyIndex::Margin { params, .. }, IndexBranch::Rate) => {
                grad[IDX_PHI] = if phi == 0.0 {
                    0.0
                } else {
                    params.alpha * phi.abs().powf(params.alpha - 1.0) * s
                };
                grad[IDX_DPHI] = params.k_v * s;
            }
        }
        grad
    }
}

fn rate_branch(phi: f64, dphi: f64, tilt_limit: f64, params: &IndexParams) -> f64 {
    -tilt_limit.powf(params.alpha) + phi.abs().powf(params.alpha)
        + params.k_v * sign(phi) * dphi
        + params.beta
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Linear extended class-K margin: `gamma(v) = slope * v`.
///
/// Negative index values (inside the safe set) yield a negative margin,
/// i.e. the index is allowed to grow toward zero; positive values force
/// decay.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GammaSpec {
    pub slope: f64,
}

impl Default for GammaSpec {
    fn default() -> Self {
        Self { slope: 1.0 }
    }
}

impl GammaSpec {
    pub fn new(slope: f64) -> Result<Self, SafetyError> {
        if !(slope.is_finite() && slope > 0.0) {
            return Err(SafetyError::BadParams(format!("gamma slope = {slope}")));
        }
        Ok(Self { slope })
    }

    pub fn eval(&self, v: f64) -> f64 {
        self.slope * v
    }
}
