//! Dense small-matrix linear algebra and scalar special functions.
//!
//! Everything downstream (solvers, certification, synthesis) works with
//! state dimensions of at most a few dozen, so the matrix type is a plain
//! row-major `Vec<f64>` with no BLAS behind it. The special functions are
//! implemented from the classical series/continued-fraction expansions so
//! the crate carries no external special-function dependency.

mod linalg;
mod special;

pub use linalg::{Matrix, Vector};
pub(crate) use linalg::sym_eigen;
pub use special::{
    chi2_cdf, chi2_quantile, ln_beta, ln_gamma, normal_cdf, normal_quantile, reg_inc_beta,
    reg_inc_gamma,
};

use thiserror::Error;

/// Tolerances shared by every numeric routine that has to make a judgement
/// call. A single record threaded through the library keeps those calls
/// consistent and auditable.
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct NumericPolicy {
    /// A symmetric matrix is accepted as positive semidefinite if every
    /// pivot encountered during factorization stays above
    /// `-psd_tol * max_abs_diag`.
    pub psd_tol: f64,
    /// Determinant threshold below which a mass matrix is treated as
    /// singular.
    pub singular_tol: f64,
}

impl Default for NumericPolicy {
    fn default() -> Self {
        Self {
            psd_tol: 1e-9,
            singular_tol: 1e-12,
        }
    }
}

#[derive(Debug, Error)]
pub enum MathError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("matrix is not positive semidefinite: pivot {pivot:.3e} at index {index}")]
    NotPsd { pivot: f64, index: usize },
    #[error("matrix is singular (|det| = {det:.3e})")]
    Singular { det: f64 },
    #[error("argument out of domain: {0}")]
    Domain(String),
    #[error("iteration failed to converge: {0}")]
    NoConvergence(String),
}

/// Support function of the ellipsoid `{v : v = mu + L z, ||z|| <= 1}` with
/// `Sigma = L L^T`, evaluated on direction `grad` about `mu = 0`:
/// `rho = sqrt(grad^T Sigma grad)`.
///
/// This is the worst-case magnitude of `grad . w` over the unit-confidence
/// ellipsoid of a Gaussian with covariance `Sigma`; scaled by a quantile
/// multiplier it bounds the tail of the projected disturbance.
pub fn ellipsoid_support(grad: &Vector, sigma: &Matrix) -> Result<f64, MathError> {
    let q = sigma.quad_form(grad)?;
    // Tiny negative values from roundoff on PSD inputs are clamped.
    if q < 0.0 {
        if q > -1e-12 * (1.0 + sigma.max_abs_diag()) {
            return Ok(0.0);
        }
        return Err(MathError::Domain(format!(
            "quadratic form is negative ({q:.3e}); covariance is not PSD"
        )));
    }
    Ok(q.sqrt())
}

/// Cholesky factorization `M = L L^T` for symmetric positive semidefinite
/// `M`, tolerant of zero (or round-off negative) pivots.
///
/// Pivots in `[-psd_tol * max_abs_diag, 0]` are flushed to zero and the
/// corresponding column of `L` is zeroed, so rank-deficient covariances
/// (point masses, rank-one multiplicative terms) factor cleanly. A pivot
/// below the tolerance is an error.
pub fn cholesky(m: &Matrix, policy: &NumericPolicy) -> Result<Matrix, MathError> {
    linalg::cholesky_psd(m, policy)
}
