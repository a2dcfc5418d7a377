//! Small-budget synthesis runs: search invariants, determinism, fitness
//! ordering, and config validation. The full-budget reproduction lives in
//! the acceptance suite.

use mm_rssa::cert::SolverKind;
use mm_rssa::mathkit::{Matrix, Vector};
use mm_rssa::model::{
    reference_additive_modes, reference_km_modes, segway_additive_model,
    segway_multiplicative_model, AdditiveSegwayMode, SegwayModel, SegwayParams,
};
use mm_rssa::safety::IndexParams;
use mm_rssa::solver::MultiplicativeOptions;
use mm_rssa::synthesis::{
    fitness_on_states, synthesize, ParamRanges, SynthesisConfig, SynthesisOutcome,
};
use mm_rssa::{ControlBounds, NumericPolicy};

fn additive_model(policy: NumericPolicy) -> SegwayModel {
    segway_additive_model(
        SegwayParams::default(),
        reference_additive_modes(),
        ControlBounds::symmetric(1, 20.0).unwrap(),
        policy,
    )
    .unwrap()
}

fn multiplicative_model(policy: NumericPolicy) -> SegwayModel {
    segway_multiplicative_model(
        SegwayParams::default(),
        reference_km_modes(),
        ControlBounds::symmetric(1, 20.0).unwrap(),
        policy,
    )
    .unwrap()
}

fn small_config(seed: u64) -> SynthesisConfig {
    let mut cfg = SynthesisConfig::segway_default(seed);
    cfg.population = 6;
    cfg.parents = 3;
    cfg.generations = 6;
    cfg.eval_samples = 400;
    cfg.final_samples = 2000;
    cfg
}

fn run(model: &SegwayModel, cfg: &SynthesisConfig) -> SynthesisOutcome {
    let policy = NumericPolicy::default();
    synthesize(model, cfg, &MultiplicativeOptions::default(), &policy).unwrap()
}

fn check_invariants(out: &SynthesisOutcome, cfg: &SynthesisConfig) {
    assert!(cfg.ranges.contains(&out.params), "params {:?}", out.params);
    assert!(!out.history.is_empty());
    assert!(out.history.len() <= cfg.generations);
    for (i, rec) in out.history.iter().enumerate() {
        assert_eq!(rec.generation, i);
        assert!(
            !rec.best.better_than(&rec.best_so_far),
            "generation best beats the running best at {i}"
        );
    }
    for w in out.history.windows(2) {
        assert!(
            !w[0].best_so_far.better_than(&w[1].best_so_far),
            "best-so-far regressed between generations {} and {}",
            w[0].generation,
            w[1].generation
        );
    }
    if out.early_stopped {
        assert_eq!(out.history.last().unwrap().best.n_infeasible, 0);
    } else {
        assert_eq!(out.history.len(), cfg.generations);
    }
    let cert = &out.final_certificate;
    assert_eq!(
        cert.n_feasible + cert.n_infeasible,
        cfg.final_samples as u64
    );
    assert!((0.0..=1.0).contains(&cert.confidence));
}

#[test]
fn tiny_budget_run_reaches_zero_infeasible() {
    // Mirrors the full reproduction at reduced scale: the motor-constant
    // config admits indices with no infeasible states in the region, and
    // the range midpoint is already one, so the search stops early.
    let policy = NumericPolicy::default();
    let model = multiplicative_model(policy);
    let mut cfg = small_config(42);
    cfg.eval_samples = 300;
    cfg.final_samples = 1500;
    let out = run(&model, &cfg);
    check_invariants(&out, &cfg);
    assert!(out.early_stopped, "search used all {} generations", cfg.generations);
    assert_eq!(out.search_fitness.n_infeasible, 0);
    assert_eq!(out.final_certificate.n_infeasible, 0);
}

#[test]
fn search_is_deterministic_per_seed() {
    let policy = NumericPolicy::default();
    let model = additive_model(policy);
    let mut cfg = small_config(7);
    cfg.solver = SolverKind::Additive;
    cfg.generations = 3;
    let a = run(&model, &cfg);
    let b = run(&model, &cfg);
    assert_eq!(a.params.alpha.to_bits(), b.params.alpha.to_bits());
    assert_eq!(a.params.k_v.to_bits(), b.params.k_v.to_bits());
    assert_eq!(a.params.beta.to_bits(), b.params.beta.to_bits());
    assert_eq!(a.history.len(), b.history.len());
    assert_eq!(
        a.final_certificate.confidence.to_bits(),
        b.final_certificate.confidence.to_bits()
    );

    let mut other = cfg.clone();
    other.seed = 8;
    let c = run(&model, &other);
    assert!(
        a.params.alpha.to_bits() != c.params.alpha.to_bits()
            || a.params.k_v.to_bits() != c.params.k_v.to_bits()
            || a.params.beta.to_bits() != c.params.beta.to_bits(),
        "different seeds searched identical candidates"
    );
}

#[test]
fn structural_infeasibility_runs_the_full_budget() {
    // Under the additive config a large share of region states cannot
    // reach the 0.99 target for any index in range (the heavy second mode
    // overwhelms the control authority there), so the zero-infeasible
    // early stop never fires and the confidence stays pinned at zero; the
    // feasible-fraction tie-break must still order the search.
    let policy = NumericPolicy::default();
    let model = additive_model(policy);
    let mut cfg = small_config(3);
    cfg.solver = SolverKind::Additive;
    cfg.generations = 4;
    let out = run(&model, &cfg);
    check_invariants(&out, &cfg);
    assert!(!out.early_stopped);
    assert_eq!(out.history.len(), cfg.generations);
    for rec in &out.history {
        assert!(rec.best.n_infeasible > 0);
    }
    for w in out.history.windows(2) {
        assert!(
            w[1].best_so_far.feasible_fraction >= w[0].best_so_far.feasible_fraction - 1e-15,
            "fraction tie-break regressed"
        );
    }
}

#[test]
fn fitness_prefers_the_wider_margin() {
    let policy = NumericPolicy::default();
    let model = multiplicative_model(policy);
    let cfg = small_config(0);
    let states: Vec<Vector> = {
        let mut rng = mm_rssa::exec::rng_for(99, 0);
        (0..1500).map(|_| cfg.region.sample(&mut rng)).collect()
    };
    let score = |p: &IndexParams| {
        fitness_on_states(
            p,
            0.1,
            &states,
            &model,
            &cfg.gamma,
            0.01,
            cfg.z_target,
            SolverKind::Multiplicative,
            &MultiplicativeOptions::default(),
            &policy,
        )
        .unwrap()
    };
    let hand = score(&IndexParams {
        alpha: 1.0,
        k_v: 1.0,
        beta: 0.001,
    });
    let midpoint = score(&cfg.ranges.midpoint());
    assert!(hand.n_infeasible > 0, "hand index infeasible pocket missed");
    assert_eq!(midpoint.n_infeasible, 0);
    assert!(midpoint.better_than(&hand));
    let n = states.len() as f64;
    assert!((hand.feasible_fraction - (n - hand.n_infeasible as f64) / n).abs() < 1e-12);
}

#[test]
fn hopeless_model_scores_near_zero() {
    // Two huge opposite deterministic disturbance modes biasing both the
    // tilt rate and the tilt acceleration: whichever safety-index branch
    // is active, one mode's drift overwhelms the control authority, so no
    // state is feasible and the certified confidence collapses.
    let policy = NumericPolicy::default();
    let zero = Matrix::zeros(4, 4);
    let modes = vec![
        AdditiveSegwayMode {
            weight: 0.5,
            mu_d: Vector::new(vec![0.0, 1e6, 0.0, 1e6]),
            sigma_d: zero.clone(),
        },
        AdditiveSegwayMode {
            weight: 0.5,
            mu_d: Vector::new(vec![0.0, -1e6, 0.0, -1e6]),
            sigma_d: zero,
        },
    ];
    let model = segway_additive_model(
        SegwayParams::default(),
        modes,
        ControlBounds::symmetric(1, 20.0).unwrap(),
        policy,
    )
    .unwrap();
    let cfg = small_config(0);
    let states: Vec<Vector> = {
        let mut rng = mm_rssa::exec::rng_for(17, 0);
        (0..500).map(|_| cfg.region.sample(&mut rng)).collect()
    };
    let fit = fitness_on_states(
        &cfg.ranges.midpoint(),
        0.1,
        &states,
        &model,
        &cfg.gamma,
        0.01,
        cfg.z_target,
        SolverKind::Additive,
        &MultiplicativeOptions::default(),
        &policy,
    )
    .unwrap();
    assert_eq!(fit.feasible_fraction, 0.0);
    assert!(fit.confidence <= 1e-12, "confidence {}", fit.confidence);
}

#[test]
fn invalid_configs_are_rejected() {
    let ok = small_config(0);
    assert!(ok.validate().is_ok());

    let mut c = ok.clone();
    c.population = 1;
    assert!(c.validate().is_err());
    let mut c = ok.clone();
    c.parents = 9;
    assert!(c.validate().is_err());
    let mut c = ok.clone();
    c.generations = 0;
    assert!(c.validate().is_err());
    let mut c = ok.clone();
    c.sigma0 = 0.0;
    assert!(c.validate().is_err());
    let mut c = ok.clone();
    c.z_target = 1.5;
    assert!(c.validate().is_err());
    let mut c = ok.clone();
    c.eps_f = 0.0;
    assert!(c.validate().is_err());
    let mut c = ok.clone();
    c.initial = Some(IndexParams {
        alpha: 9.0,
        k_v: 1.0,
        beta: 0.5,
    });
    assert!(c.validate().is_err());
    let mut c = ok.clone();
    c.ranges = ParamRanges {
        alpha: (5.0, 0.1),
        ..ParamRanges::default()
    };
    assert!(c.validate().is_err());
}
