//! Versioned JSON run configuration shared by the command-line tool and
//! the test harness, plus the formatting/hashing helpers its outputs use.
//!
//! The schema is strict: unknown fields are rejected so a typo in a config
//! file fails loudly instead of silently running defaults.

use crate::cert::{SamplePlan, SolverKind, StateRegion};
use crate::mathkit::{Matrix, NumericPolicy, Vector};
use crate::model::{
    segway_additive_model, segway_multiplicative_model, AdditiveSegwayMode, ControlBounds, KmMode,
    ModelError, SegwayModel, SegwayParams,
};
use crate::safety::{GammaSpec, IndexParams, SafetyError, SafetyIndex};
use crate::sim::NominalController;
use crate::synthesis::ParamRanges;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config parse error: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("unsupported schema_version {found} (this build reads {expected})")]
    SchemaVersion { found: u32, expected: u32 },
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error("model construction failed: {0}")]
    Model(#[from] ModelError),
    #[error("safety index construction failed: {0}")]
    Safety(#[from] SafetyError),
}

/// Top-level run configuration. Command-specific sections are optional;
/// each command requires its own section (or usable defaults).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    pub model: ModelConfig,
    #[serde(default)]
    pub index: IndexConfig,
    #[serde(default = "default_gamma_slope")]
    pub gamma_slope: f64,
    #[serde(default = "default_eps_f")]
    pub eps_f: f64,
    /// Bisection width for the additive risk-allocation search.
    #[serde(default = "default_eps0")]
    pub eps0: f64,
    #[serde(default)]
    pub seed: u64,
    /// Solver used by commands that accept either; defaults to the
    /// model's native uncertainty structure.
    #[serde(default)]
    pub solver: Option<SolverKind>,
    #[serde(default)]
    pub solve: Option<SolveSection>,
    #[serde(default)]
    pub simulate: Option<SimulateSection>,
    #[serde(default)]
    pub certify: Option<CertifySection>,
    #[serde(default)]
    pub synthesize: Option<SynthesizeSection>,
    #[serde(default)]
    pub compare: Option<CompareSection>,
}

fn default_gamma_slope() -> f64 {
    1.0
}
fn default_eps_f() -> f64 {
    0.01
}
fn default_eps0() -> f64 {
    1e-6
}
fn default_control_limit() -> f64 {
    20.0
}
fn default_tilt_limit() -> f64 {
    0.1
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelConfig {
    /// Drift disturbance `d` added to `f`, mixture over `modes`.
    Additive {
        #[serde(default = "default_control_limit")]
        control_limit: f64,
        modes: Vec<AdditiveModeConfig>,
    },
    /// Motor constant `Km` drawn from a Gaussian mixture.
    Multiplicative {
        #[serde(default = "default_control_limit")]
        control_limit: f64,
        modes: Vec<KmModeConfig>,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdditiveModeConfig {
    pub weight: f64,
    /// Mean disturbance, one entry per state.
    pub mu: Vec<f64>,
    /// Disturbance covariance, row major.
    pub cov: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KmModeConfig {
    pub weight: f64,
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IndexConfig {
    #[serde(default = "default_tilt_limit")]
    pub tilt_limit: f64,
    /// Margin-index parameters; absent means the bare tilt index.
    #[serde(default)]
    pub params: Option<IndexParams>,
}

impl Default for IndexConfig {
    fn default() -> Self {
        Self {
            tilt_limit: default_tilt_limit(),
            params: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolveSection {
    pub state: Vec<f64>,
    pub u_ref: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateSection {
    pub x0: Vec<f64>,
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default = "default_steps")]
    pub steps: usize,
    #[serde(default = "default_rollouts")]
    pub rollouts: usize,
    #[serde(default = "default_gain")]
    pub gain: f64,
    #[serde(default = "default_target_speed")]
    pub target_speed: f64,
    /// Run the safe-control layer; false rolls out the bare nominal
    /// controller.
    #[serde(default = "default_true")]
    pub safety: bool,
}

fn default_dt() -> f64 {
    0.01
}
fn default_steps() -> usize {
    1000
}
fn default_rollouts() -> usize {
    1
}
fn default_gain() -> f64 {
    10.0
}
fn default_target_speed() -> f64 {
    1.0
}
fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CertifySection {
    #[serde(default = "default_cert_samples")]
    pub samples: usize,
    #[serde(default = "default_z_target")]
    pub z_target: f64,
    #[serde(default = "default_prior")]
    pub prior_alpha: f64,
    #[serde(default = "default_prior")]
    pub prior_beta: f64,
    /// Sampling region; the Segway default when absent.
    #[serde(default)]
    pub region: Option<StateRegion>,
    /// Trajectory sampling instead of uniform draws.
    #[serde(default)]
    pub trajectory: Option<TrajectoryPlanConfig>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajectoryPlanConfig {
    pub rollouts: usize,
    pub steps_per_rollout: usize,
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default = "default_gain")]
    pub gain: f64,
    #[serde(default = "default_target_speed")]
    pub target_speed: f64,
}

fn default_cert_samples() -> usize {
    100_000
}
fn default_z_target() -> f64 {
    0.9999
}
fn default_prior() -> f64 {
    1.0
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthesizeSection {
    #[serde(default)]
    pub ranges: Option<ParamRanges>,
    #[serde(default = "default_population")]
    pub population: usize,
    #[serde(default = "default_parents")]
    pub parents: usize,
    #[serde(default = "default_sigma0")]
    pub sigma0: f64,
    #[serde(default = "default_generations")]
    pub generations: usize,
    #[serde(default = "default_eval_samples")]
    pub eval_samples: usize,
    #[serde(default = "default_cert_samples")]
    pub final_samples: usize,
    #[serde(default = "default_z_target")]
    pub z_target: f64,
    #[serde(default)]
    pub region: Option<StateRegion>,
    #[serde(default)]
    pub initial: Option<IndexParams>,
}

fn default_population() -> usize {
    8
}
fn default_parents() -> usize {
    4
}
fn default_sigma0() -> f64 {
    0.3
}
fn default_generations() -> usize {
    50
}
fn default_eval_samples() -> usize {
    10_000
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompareSection {
    /// Explicit probe states; when absent, `probes` states are drawn
    /// uniformly from the region.
    #[serde(default)]
    pub states: Option<Vec<Vec<f64>>>,
    #[serde(default = "default_probes")]
    pub probes: usize,
    #[serde(default)]
    pub region: Option<StateRegion>,
    #[serde(default = "default_sweep_points")]
    pub sweep_points: usize,
}

fn default_probes() -> usize {
    50
}
fn default_sweep_points() -> usize {
    10_000
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let cfg: RunConfig = serde_json::from_str(text)?;
        if cfg.schema_version != SCHEMA_VERSION {
            return Err(ConfigError::SchemaVersion {
                found: cfg.schema_version,
                expected: SCHEMA_VERSION,
            });
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.eps_f > 0.0 && self.eps_f < 1.0) {
            return Err(ConfigError::Invalid(format!(
                "eps_f must be in (0,1), got {}",
                self.eps_f
            )));
        }
        if !(self.eps0 > 0.0) {
            return Err(ConfigError::Invalid("eps0 must be positive".into()));
        }
        if !(self.gamma_slope > 0.0) {
            return Err(ConfigError::Invalid("gamma_slope must be positive".into()));
        }
        match &self.model {
            ModelConfig::Additive {
                control_limit,
                modes,
            } => {
                if !(*control_limit > 0.0) {
                    return Err(ConfigError::Invalid("control_limit must be positive".into()));
                }
                if modes.is_empty() {
                    return Err(ConfigError::Invalid("model needs at least one mode".into()));
                }
                for (i, m) in modes.iter().enumerate() {
                    if m.mu.len() != 4 {
                        return Err(ConfigError::Invalid(format!(
                            "mode {i}: mu must have 4 entries"
                        )));
                    }
                    if m.cov.len() != 4 || m.cov.iter().any(|r| r.len() != 4) {
                        return Err(ConfigError::Invalid(format!(
                            "mode {i}: cov must be 4x4"
                        )));
                    }
                }
            }
            ModelConfig::Multiplicative {
                control_limit,
                modes,
            } => {
                if !(*control_limit > 0.0) {
                    return Err(ConfigError::Invalid("control_limit must be positive".into()));
                }
                if modes.is_empty() {
                    return Err(ConfigError::Invalid("model needs at least one mode".into()));
                }
            }
        }
        Ok(())
    }

    /// Construct the model this config describes (also validates mode
    /// weights and covariances).
    pub fn build_model(&self, policy: &NumericPolicy) -> Result<SegwayModel, ConfigError> {
        let params = SegwayParams::default();
        let model = match &self.model {
            ModelConfig::Additive {
                control_limit,
                modes,
            } => {
                let bounds = ControlBounds::symmetric(1, *control_limit)?;
                let modes = modes
                    .iter()
                    .map(|m| AdditiveSegwayMode {
                        weight: m.weight,
                        mu_d: Vector::new(m.mu.clone()),
                        sigma_d: Matrix::from_rows(&m.cov),
                    })
                    .collect();
                segway_additive_model(params, modes, bounds, *policy)?
            }
            ModelConfig::Multiplicative {
                control_limit,
                modes,
            } => {
                let bounds = ControlBounds::symmetric(1, *control_limit)?;
                let modes = modes
                    .iter()
                    .map(|m| KmMode {
                        weight: m.weight,
                        mean: m.mean,
                        std: m.std,
                    })
                    .collect();
                segway_multiplicative_model(params, modes, bounds, *policy)?
            }
        };
        Ok(model)
    }

    pub fn build_index(&self) -> Result<SafetyIndex, ConfigError> {
        Ok(match self.index.params {
            None => SafetyIndex::tilt_only(self.index.tilt_limit),
            Some(p) => SafetyIndex::with_margin(self.index.tilt_limit, p)?,
        })
    }

    pub fn build_gamma(&self) -> Result<GammaSpec, ConfigError> {
        Ok(GammaSpec::new(self.gamma_slope)?)
    }

    /// The solver a command should use: the explicit override, else the
    /// model's native kind.
    pub fn solver_kind(&self) -> SolverKind {
        self.solver.unwrap_or(match self.model {
            ModelConfig::Additive { .. } => SolverKind::Additive,
            ModelConfig::Multiplicative { .. } => SolverKind::Multiplicative,
        })
    }

    pub fn certify_plan(&self) -> Result<SamplePlan, ConfigError> {
        let section = self.certify.clone().unwrap_or(CertifySection {
            samples: default_cert_samples(),
            z_target: default_z_target(),
            prior_alpha: 1.0,
            prior_beta: 1.0,
            region: None,
            trajectory: None,
        });
        let region = section
            .region
            .clone()
            .unwrap_or_else(StateRegion::segway_default);
        Ok(match &section.trajectory {
            None => SamplePlan::UniformRegion {
                region,
                n: section.samples,
            },
            Some(t) => SamplePlan::Trajectory {
                region,
                n_rollouts: t.rollouts,
                steps_per_rollout: t.steps_per_rollout,
                dt: t.dt,
                controller: NominalController {
                    gain: t.gain,
                    target_speed: t.target_speed,
                },
            },
        })
    }
}

/// FNV-1a over raw bytes; the provenance hash stamped on outputs.
pub fn fnv64(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x100000001b3);
    }
    hash
}

pub fn config_hash(raw: &str) -> String {
    format!("{:016x}", fnv64(raw.as_bytes()))
}

/// Full-precision float formatting for CSV payloads (17 significant
/// digits, enough for exact f64 round-trips).
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

/// Provenance record written next to every command's outputs. The
/// timestamp lives only here so payload files stay byte-identical across
/// reruns.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_hash: String,
    pub seed: u64,
    pub schema_version: u32,
    pub tool_version: String,
    pub timestamp_unix: u64,
}
