//! Derivative-free synthesis of safety-index parameters.
//!
//! The search maximizes the certified probability that at least a target
//! fraction of sampled states is feasible. Parameters live in per-axis
//! ranges and are optimized in an unbounded logit encoding, so every
//! decoded candidate is strictly inside its range by construction. All
//! candidates of a generation are scored on one shared, seed-determined
//! sample set (common random numbers), which makes their ranking a fair
//! paired comparison.

mod cmaes;

pub use cmaes::CmaEs;

use crate::cert::{self, CertError, SolverKind, StateRegion};
use crate::exec;
use crate::mathkit::{NumericPolicy, Vector};
use crate::model::{DynamicsModel, SegwayModel};
use crate::safety::{GammaSpec, IndexParams, SafetyIndex};
use crate::solver::{MultiplicativeOptions, SolveError};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SynthesisError {
    #[error("invalid synthesis config: {0}")]
    BadConfig(String),
    #[error(transparent)]
    Cert(#[from] CertError),
    #[error("solver error during fitness evaluation: {0}")]
    Solve(#[from] SolveError),
}

/// Open parameter ranges searched over.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParamRanges {
    pub alpha: (f64, f64),
    pub k_v: (f64, f64),
    pub beta: (f64, f64),
}

impl Default for ParamRanges {
    fn default() -> Self {
        Self {
            alpha: (0.1, 5.0),
            k_v: (0.1, 5.0),
            beta: (0.001, 1.0),
        }
    }
}

impl ParamRanges {
    pub fn validate(&self) -> Result<(), SynthesisError> {
        for (name, (lo, hi)) in [
            ("alpha", self.alpha),
            ("k_v", self.k_v),
            ("beta", self.beta),
        ] {
            if !(lo.is_finite() && hi.is_finite() && lo < hi && lo > 0.0) {
                return Err(SynthesisError::BadConfig(format!(
                    "range for {name} must satisfy 0 < low < high, got ({lo}, {hi})"
                )));
            }
        }
        Ok(())
    }

    pub fn contains(&self, p: &IndexParams) -> bool {
        let inside = |(lo, hi): (f64, f64), x: f64| lo < x && x < hi;
        inside(self.alpha, p.alpha) && inside(self.k_v, p.k_v) && inside(self.beta, p.beta)
    }

    /// Map parameters to the unbounded search space.
    pub fn encode(&self, p: &IndexParams) -> Vector {
        Vector::new(vec![
            logit(self.alpha, p.alpha),
            logit(self.k_v, p.k_v),
            logit(self.beta, p.beta),
        ])
    }

    /// Map a search point back to parameters (always strictly in range).
    pub fn decode(&self, t: &Vector) -> IndexParams {
        IndexParams {
            alpha: unlogit(self.alpha, t[0]),
            k_v: unlogit(self.k_v, t[1]),
            beta: unlogit(self.beta, t[2]),
        }
    }

    /// Range midpoints, the default search start.
    pub fn midpoint(&self) -> IndexParams {
        IndexParams {
            alpha: 0.5 * (self.alpha.0 + self.alpha.1),
            k_v: 0.5 * (self.k_v.0 + self.k_v.1),
            beta: 0.5 * (self.beta.0 + self.beta.1),
        }
    }
}

/// Saturation for the logit encoding; keeps decode(encode(x)) exact over
/// the representable interior while bounding the search coordinates.
const LOGIT_CLAMP: f64 = 36.0;

fn logit((lo, hi): (f64, f64), x: f64) -> f64 {
    let s = ((x - lo) / (hi - x)).ln();
    s.clamp(-LOGIT_CLAMP, LOGIT_CLAMP)
}

fn unlogit((lo, hi): (f64, f64), t: f64) -> f64 {
    let s = 1.0 / (1.0 + (-t.clamp(-LOGIT_CLAMP, LOGIT_CLAMP)).exp());
    // Defensive: keep strictly inside even if rounding lands on a bound.
    let s = s.clamp(1e-12, 1.0 - 1e-12);
    lo + (hi - lo) * s
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthesisConfig {
    pub ranges: ParamRanges,
    /// Candidates per generation (lambda).
    pub population: usize,
    /// Recombination parents (mu).
    pub parents: usize,
    /// Initial step size in logit space.
    pub sigma0: f64,
    pub generations: usize,
    /// States per fitness evaluation during search.
    pub eval_samples: usize,
    /// States for the final fresh-sample certificate.
    pub final_samples: usize,
    /// Feasible-fraction level the certificate targets.
    pub z_target: f64,
    pub region: StateRegion,
    pub solver: SolverKind,
    pub eps_f: f64,
    pub gamma: GammaSpec,
    pub tilt_limit: f64,
    pub seed: u64,
    /// Search start; range midpoint when absent.
    pub initial: Option<IndexParams>,
}

impl SynthesisConfig {
    pub fn segway_default(seed: u64) -> Self {
        Self {
            ranges: ParamRanges::default(),
            population: 8,
            parents: 4,
            sigma0: 0.3,
            generations: 50,
            eval_samples: 10_000,
            final_samples: 100_000,
            z_target: 0.9999,
            region: StateRegion::segway_default(),
            solver: SolverKind::Multiplicative,
            eps_f: 0.01,
            gamma: GammaSpec::default(),
            tilt_limit: 0.1,
            seed,
            initial: None,
        }
    }

    pub fn validate(&self) -> Result<(), SynthesisError> {
        self.ranges.validate()?;
        if self.population < 2 || self.parents == 0 || self.parents > self.population {
            return Err(SynthesisError::BadConfig(
                "population must be >= 2 with 1 <= parents <= population".into(),
            ));
        }
        if self.generations == 0 || self.eval_samples == 0 || self.final_samples == 0 {
            return Err(SynthesisError::BadConfig(
                "generations and sample counts must be positive".into(),
            ));
        }
        if !(self.sigma0 > 0.0) {
            return Err(SynthesisError::BadConfig("sigma0 must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.z_target) {
            return Err(SynthesisError::BadConfig("z_target must be in [0,1]".into()));
        }
        if !(self.eps_f > 0.0 && self.eps_f < 1.0) {
            return Err(SynthesisError::BadConfig("eps_f must be in (0,1)".into()));
        }
        if let Some(p) = &self.initial {
            if !self.ranges.contains(p) {
                return Err(SynthesisError::BadConfig(
                    "initial parameters are outside the search ranges".into(),
                ));
            }
        }
        Ok(())
    }
}

/// Fitness of one candidate on one sample set. Ordered lexicographically:
/// certified confidence first, raw feasible fraction as the tie-breaker
/// (the confidence saturates at 0 far from feasibility, where the
/// fraction still gives the search a gradient).
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Fitness {
    /// `prob_at_least(z_target, n_feasible, n_infeasible, 1, 1)`.
    pub confidence: f64,
    pub feasible_fraction: f64,
    pub n_infeasible: u64,
}

impl Fitness {
    pub fn better_than(&self, other: &Fitness) -> bool {
        match self.confidence.total_cmp(&other.confidence) {
            std::cmp::Ordering::Greater => true,
            std::cmp::Ordering::Less => false,
            std::cmp::Ordering::Equal => self.feasible_fraction > other.feasible_fraction,
        }
    }
}

/// Score a candidate on a fixed state sample under a uniform prior.
pub fn fitness_on_states(
    params: &IndexParams,
    tilt_limit: f64,
    states: &[Vector],
    model: &SegwayModel,
    gamma: &GammaSpec,
    eps_f: f64,
    z_target: f64,
    kind: SolverKind,
    opts: &MultiplicativeOptions,
    policy: &NumericPolicy,
) -> Result<Fitness, SynthesisError> {
    let index = SafetyIndex::with_margin(tilt_limit, *params)
        .map_err(|e| SynthesisError::BadConfig(e.to_string()))?;
    let flags = exec::map_indexed(states.len(), |i| {
        cert::state_is_feasible(&states[i], model, &index, gamma, eps_f, kind, opts, policy)
    });
    let mut n_feasible = 0u64;
    for f in flags {
        if f? {
            n_feasible += 1;
        }
    }
    let n = states.len() as u64;
    let n_infeasible = n - n_feasible;
    let confidence = cert::prob_at_least(z_target, n_feasible, n_infeasible, 1.0, 1.0)
        .map_err(CertError::Math)?;
    Ok(Fitness {
        confidence,
        feasible_fraction: n_feasible as f64 / n as f64,
        n_infeasible,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GenerationRecord {
    pub generation: usize,
    pub best_params: IndexParams,
    pub best: Fitness,
    pub mean_confidence: f64,
    /// Best fitness seen in any generation so far (nondecreasing).
    pub best_so_far: Fitness,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthesisOutcome {
    pub params: IndexParams,
    /// Fitness of `params` on its search sample set.
    pub search_fitness: Fitness,
    pub history: Vec<GenerationRecord>,
    /// Certificate of `params` on a fresh sample set drawn with a seed
    /// never used during search (overfitting guard).
    pub final_certificate: cert::FeasibilityCertificate,
    /// The search stopped before exhausting its generation budget because
    /// a candidate reached zero infeasible samples.
    pub early_stopped: bool,
}

// Seed-derivation tags separating the search's independent RNG streams.
const SEED_TAG_CMA: u64 = 0x434d412d73616d70;
const SEED_TAG_STATES: u64 = 0x7374617465732d67;
const SEED_TAG_FINAL: u64 = 0x66696e616c2d7365;

fn draw_states(region: &StateRegion, n: usize, seed: u64, stream: u64) -> Vec<Vector> {
    let mut rng = exec::rng_for(seed, stream);
    (0..n).map(|_| region.sample(&mut rng)).collect()
}

/// The exact state sample a run with this config uses for its final
/// certificate, so competing indices can be scored on the same draw.
pub fn final_certificate_sample(cfg: &SynthesisConfig) -> Vec<Vector> {
    draw_states(
        &cfg.region,
        cfg.final_samples,
        exec::derive_seed(cfg.seed, SEED_TAG_FINAL),
        0,
    )
}

/// Run the evolutionary search and certify the winner on fresh samples.
pub fn synthesize(
    model: &SegwayModel,
    cfg: &SynthesisConfig,
    opts: &MultiplicativeOptions,
    policy: &NumericPolicy,
) -> Result<SynthesisOutcome, SynthesisError> {
    cfg.validate()?;
    if cfg.region.lower.len() != model.state_dim() {
        return Err(SynthesisError::BadConfig(
            "region dimension does not match the model".into(),
        ));
    }

    let start = cfg.initial.unwrap_or_else(|| cfg.ranges.midpoint());
    let mut es = CmaEs::new(cfg.ranges.encode(&start), cfg.sigma0, cfg.population, cfg.parents);
    let mut cma_rng = exec::rng_for(cfg.seed, SEED_TAG_CMA);

    let mut history = Vec::with_capacity(cfg.generations);
    let mut best_params = start;
    let mut best_fitness: Option<Fitness> = None;
    let mut early_stopped = false;

    'search: for generation in 0..cfg.generations {
        let states = draw_states(
            &cfg.region,
            cfg.eval_samples,
            exec::derive_seed(cfg.seed, SEED_TAG_STATES),
            generation as u64,
        );
        let points = es.ask(&mut cma_rng);
        let candidates: Vec<IndexParams> =
            points.iter().map(|t| cfg.ranges.decode(t)).collect();

        let scores: Vec<Result<Fitness, SynthesisError>> =
            exec::map_indexed(candidates.len(), |i| {
                fitness_on_states(
                    &candidates[i],
                    cfg.tilt_limit,
                    &states,
                    model,
                    &cfg.gamma,
                    cfg.eps_f,
                    cfg.z_target,
                    cfg.solver,
                    opts,
                    policy,
                )
            });
        let mut fitnesses = Vec::with_capacity(scores.len());
        for s in scores {
            fitnesses.push(s?);
        }

        // Rank best-first; ties broken by candidate index for determinism.
        let mut order: Vec<usize> = (0..fitnesses.len()).collect();
        order.sort_by(|&a, &b| {
            fitnesses[b]
                .confidence
                .total_cmp(&fitnesses[a].confidence)
                .then(
                    fitnesses[b]
                        .feasible_fraction
                        .total_cmp(&fitnesses[a].feasible_fraction),
                )
                .then(a.cmp(&b))
        });

        let gen_best_idx = order[0];
        let gen_best = fitnesses[gen_best_idx];
        if best_fitness.map_or(true, |b| gen_best.better_than(&b)) {
            best_fitness = Some(gen_best);
            best_params = candidates[gen_best_idx];
        }
        let best_so_far = best_fitness.expect("set above");
        history.push(GenerationRecord {
            generation,
            best_params: candidates[gen_best_idx],
            best: gen_best,
            mean_confidence: fitnesses.iter().map(|f| f.confidence).sum::<f64>()
                / fitnesses.len() as f64,
            best_so_far,
        });

        if gen_best.n_infeasible == 0 {
            early_stopped = true;
            break 'search;
        }
        es.tell(&order);
    }

    // If no generation ran a candidate better than nothing (cannot happen
    // with generations >= 1), fall back to scoring the start point.
    let search_fitness = match best_fitness {
        Some(f) => f,
        None => {
            let states = draw_states(
                &cfg.region,
                cfg.eval_samples,
                exec::derive_seed(cfg.seed, SEED_TAG_STATES),
                0,
            );
            fitness_on_states(
                &best_params,
                cfg.tilt_limit,
                &states,
                model,
                &cfg.gamma,
                cfg.eps_f,
                cfg.z_target,
                cfg.solver,
                opts,
                policy,
            )?
        }
    };

    // Fresh-sample certificate with a seed stream never used in search.
    let final_states = draw_states(
        &cfg.region,
        cfg.final_samples,
        exec::derive_seed(cfg.seed, SEED_TAG_FINAL),
        0,
    );
    let index = SafetyIndex::with_margin(cfg.tilt_limit, best_params)
        .map_err(|e| SynthesisError::BadConfig(e.to_string()))?;
    let flags = exec::map_indexed(final_states.len(), |i| {
        cert::state_is_feasible(
            &final_states[i],
            model,
            &index,
            &cfg.gamma,
            cfg.eps_f,
            cfg.solver,
            opts,
            policy,
        )
    });
    let mut n_feasible = 0u64;
    for f in flags {
        if f? {
            n_feasible += 1;
        }
    }
    let n_infeasible = final_states.len() as u64 - n_feasible;
    let final_certificate = cert::FeasibilityCertificate::new(
        n_feasible,
        n_infeasible,
        1.0,
        1.0,
        cfg.z_target,
    )
    .map_err(CertError::Math)?;

    Ok(SynthesisOutcome {
        params: best_params,
        search_fitness,
        history,
        final_certificate,
        early_stopped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn logit_round_trip() {
        let ranges = ParamRanges::default();
        let p = IndexParams {
            alpha: 0.15,
            k_v: 4.17,
            beta: 0.55,
        };
        let q = ranges.decode(&ranges.encode(&p));
        assert!((q.alpha - p.alpha).abs() < 1e-12);
        assert!((q.k_v - p.k_v).abs() < 1e-12);
        assert!((q.beta - p.beta).abs() < 1e-12);
    }

    #[test]
    fn decode_stays_strictly_inside() {
        let ranges = ParamRanges::default();
        for t in [-1e9, -36.0, -1.0, 0.0, 1.0, 36.0, 1e9] {
            let p = ranges.decode(&Vector::new(vec![t, t, t]));
            assert!(ranges.contains(&p), "decode({t}) left the range: {p:?}");
        }
    }

    #[test]
    fn midpoint_is_inside() {
        let ranges = ParamRanges::default();
        assert!(ranges.contains(&ranges.midpoint()));
    }
}
