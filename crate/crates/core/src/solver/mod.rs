//! Chance-constrained safe-control solvers.
//!
//! Both solvers answer: minimize `||u - u_ref||^2` over the control box
//! subject to `P( phidot_index(x, u) <= -gamma(phi(x)) ) >= 1 - eps_f`,
//! where the probability is over the mixture uncertainty in `(f, g)`.
//! The joint chance constraint is split across modes: mode `i` receives a
//! per-mode confidence `p_i` and the allocation must satisfy
//! `sum_i w_i p_i >= 1 - eps_f`.
//!
//! [`additive`]: uncertainty only in the drift `f`. Every mode's
//! constraint is a halfspace in `u` with a risk-dependent offset, and the
//! optimal allocation equalizes those offsets; a bisection on the first
//! mode's multiplier finds it.
//!
//! [`multiplicative`]: uncertainty in `g` too. Each mode contributes a
//! second-order cone; an interior-point method solves the control problem
//! at a fixed allocation and a projected-gradient outer loop improves the
//! allocation.

pub mod additive;
pub mod multiplicative;
pub mod socp;

pub use additive::{
    binary_search_allocation, mode_offset, solve_k_chain, solve_safe_control_additive,
    AdditiveConstraint, AdditiveOptions,
};
pub use multiplicative::{
    bilevel_solve, multiplicative_state_feasible, MultiplicativeOptions,
};
pub use socp::{build_soc_constraint, solve_socp, SocConstraint, SocpError, SocpOptions, SocpSolution};

use crate::mathkit::{MathError, Vector};
use crate::model::ModelError;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SolveError {
    #[error(
        "risk allocation bracket exhausted: even the largest multiplier reaches only \
         probability {achieved:.6} < {target:.6}"
    )]
    BracketExhausted { achieved: f64, target: f64 },
    #[error(
        "degenerate mode {index}: deterministic drift cannot satisfy the offset equality"
    )]
    DegenerateMode { index: usize },
    #[error("model is not additive: control-matrix moments differ across modes")]
    NotAdditive,
    #[error("chance budget eps_f = {0} is outside the solvable range {1}")]
    BadBudget(f64, String),
    #[error("math error: {0}")]
    Math(#[from] MathError),
    #[error("model error: {0}")]
    Model(#[from] ModelError),
    #[error("interior-point failure: {0}")]
    Socp(String),
}

/// How a solve ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    /// The reference control already satisfied every constraint.
    ReferenceFeasible,
    /// The reference was modified; the returned control is optimal.
    Optimal,
    /// No control in the box satisfies the constraints; the returned
    /// control minimizes the worst violation.
    InfeasibleRelaxed,
}

/// Per-mode risk allocation actually used by a solve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModeAllocation {
    /// Confidence multiplier (ellipsoid scaling) for the mode.
    pub k: f64,
    /// Probability credited to the mode, `p_i`.
    pub p: f64,
    /// True when the equalizing multiplier was negative and clamped to 0.
    pub clamped: bool,
    /// True when the mode's drift is deterministic along the gradient
    /// (`rho_i = 0`), so `p_i` is 0/1 by implication rather than a tail
    /// bound.
    pub deterministic: bool,
}

/// Result of a safe-control solve.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SafeControlResult {
    pub u: Vector,
    pub status: SolveStatus,
    /// `||u - u_ref||^2`.
    pub objective: f64,
    /// Risk allocation per mode, in model order.
    pub allocation: Vec<ModeAllocation>,
    /// `sum_i w_i p_i` credited by the allocation.
    pub achieved: f64,
    /// Worst constraint residual at `u`: `<= 0` iff all constraints hold.
    pub slack: f64,
    pub diagnostics: SolveDiagnostics,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct SolveDiagnostics {
    /// Iterations of the dominating loop (bisection steps, or outer
    /// allocation-descent steps).
    pub iterations: usize,
    /// Objective after each accepted outer step (multiplicative solver);
    /// a single entry for one-shot solves.
    pub objective_history: Vec<f64>,
    /// Stationarity/complementarity residual of the final iterate, where
    /// the solver computes one.
    pub kkt_residual: f64,
}
