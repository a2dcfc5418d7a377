//! Safe-control solvers for control-affine systems whose dynamics carry
//! multi-modal Gaussian uncertainty.
//!
//! The library answers one question in several forms: given a safety index
//! `phi` and a chance budget `eps_f`, which control closest to a reference
//! keeps `phi` decreasing with probability at least `1 - eps_f` when the
//! dynamics are only known as a Gaussian mixture?
//!
//! Modules:
//!
//! - [`mathkit`]: small dense linear algebra and the special functions
//!   (incomplete gamma/beta, normal and chi-square quantiles) every other
//!   module leans on. No external special-function dependency.
//! - [`model`]: control-affine mixture models and the Segway instance used
//!   throughout the examples and tests.
//! - [`safety`]: the safety-index family, its gradients, and the class-K
//!   margin function.
//! - [`solver`]: the two chance-constrained solvers. Additive uncertainty
//!   reduces to a risk-allocation search plus a box-constrained projection;
//!   multiplicative uncertainty yields second-order-cone constraints solved
//!   by an interior-point method inside a bi-level allocation descent.
//! - [`cert`]: sampling-based feasibility certification with Beta posteriors.
//! - [`synthesis`]: CMA-ES search for safety-index parameters that make the
//!   solver feasible everywhere.
//! - [`sim`]: closed-loop rollouts, uni-modal baselines, and feasible-set
//!   comparisons.
//! - [`exec`]: batch evaluation helpers; data-parallel when the `parallel`
//!   feature (default on) is enabled, with a sequential fallback that
//!   produces bit-identical results.
//! - [`config`]: serde-backed run configuration shared with the CLI.

pub mod cert;
pub mod config;
pub mod exec;
pub mod mathkit;
pub mod model;
pub mod safety;
pub mod sim;
pub mod solver;
pub mod synthesis;

pub use mathkit::{Matrix, NumericPolicy, Vector};
pub use model::{ControlBounds, DynamicsModel, ModeParams};
pub use safety::{GammaSpec, SafetyIndex};
pub use solver::{SafeControlResult, SolveStatus};
