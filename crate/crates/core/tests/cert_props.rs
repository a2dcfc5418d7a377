//! Certification invariants: Beta-posterior math against closed forms and
//! quadrature, calibration of the reported confidence, and determinism of
//! the sampling pipeline.

use mm_rssa::cert::{
    posterior_density, prob_at_least, sample_feasibility, FeasibilityCertificate, SampleOutcome,
    SamplePlan, SolverKind, StateRegion,
};
use mm_rssa::exec::rng_for;
use mm_rssa::model::{reference_additive_modes, segway_additive_model, SegwayModel, SegwayParams};
use mm_rssa::safety::{GammaSpec, SafetyIndex};
use mm_rssa::sim::NominalController;
use mm_rssa::solver::MultiplicativeOptions;
use mm_rssa::{ControlBounds, NumericPolicy};
use proptest::prelude::*;
use rand::Rng;

fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    assert!(n % 2 == 0);
    let h = (b - a) / n as f64;
    let mut s = f(a) + f(b);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        s += w * f(a + i as f64 * h);
    }
    s * h / 3.0
}

fn additive_model(policy: NumericPolicy) -> SegwayModel {
    segway_additive_model(
        SegwayParams::default(),
        reference_additive_modes(),
        ControlBounds::symmetric(1, 20.0).unwrap(),
        policy,
    )
    .unwrap()
}

#[test]
fn no_failure_confidence_matches_closed_form() {
    // With a uniform prior and zero failures the posterior is
    // Beta(n_f + 1, 1), so P(z >= z0) = 1 - z0^(n_f + 1).
    for &n_f in &[10u64, 100, 1000, 100_000, 250_000] {
        for &z0 in &[0.9, 0.99, 0.9999] {
            let got = prob_at_least(z0, n_f, 0, 1.0, 1.0).unwrap();
            let want = 1.0 - z0.powi(n_f as i32 + 1);
            assert!(
                (got - want).abs() <= 1e-9 * want.max(1e-300),
                "n_f {n_f} z0 {z0}: got {got} want {want}"
            );
        }
    }
}

#[test]
fn confidence_moves_the_right_way() {
    let base = prob_at_least(0.97, 200, 3, 1.0, 1.0).unwrap();
    assert!(prob_at_least(0.97, 400, 3, 1.0, 1.0).unwrap() > base);
    assert!(prob_at_least(0.97, 200, 6, 1.0, 1.0).unwrap() < base);
    assert!(prob_at_least(0.99, 200, 3, 1.0, 1.0).unwrap() < base);
    assert_eq!(prob_at_least(0.0, 200, 3, 1.0, 1.0).unwrap(), 1.0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn posterior_integrates_to_one_with_the_right_mean(
        n_f in 1u64..400,
        n_n in 1u64..400,
        alpha in 1.0f64..3.0,
        beta in 1.0f64..3.0,
    ) {
        let density = |z: f64| posterior_density(z, n_f, n_n, alpha, beta).unwrap();
        let total = simpson(density, 0.0, 1.0, 8192);
        prop_assert!((total - 1.0).abs() <= 1e-6, "integral {total}");

        let mean = simpson(|z| z * density(z), 0.0, 1.0, 8192);
        let want = (n_f as f64 + alpha) / ((n_f + n_n) as f64 + alpha + beta);
        prop_assert!((mean - want).abs() <= 1e-6, "mean {mean} want {want}");
    }
}

#[test]
fn tail_probability_matches_density_quadrature() {
    for &(n_f, n_n, z0) in &[(40u64, 2u64, 0.9), (5, 5, 0.4), (300, 1, 0.99)] {
        let density = |z: f64| posterior_density(z, n_f, n_n, 1.5, 2.0).unwrap();
        let tail = simpson(density, z0, 1.0, 8192);
        let got = prob_at_least(z0, n_f, n_n, 1.5, 2.0).unwrap();
        assert!(
            (got - tail).abs() <= 1e-8,
            "n_f {n_f} n_n {n_n} z0 {z0}: got {got} quadrature {tail}"
        );
    }
}

#[test]
fn posterior_density_handles_the_endpoints() {
    // Flat prior, no data: the posterior is uniform.
    assert!((posterior_density(0.0, 0, 0, 1.0, 1.0).unwrap() - 1.0).abs() <= 1e-12);
    assert!((posterior_density(0.5, 0, 0, 1.0, 1.0).unwrap() - 1.0).abs() <= 1e-12);
    assert!((posterior_density(1.0, 0, 0, 1.0, 1.0).unwrap() - 1.0).abs() <= 1e-12);
    // Positive exponents vanish at the pinned ends.
    assert_eq!(posterior_density(0.0, 3, 2, 1.0, 1.0).unwrap(), 0.0);
    assert_eq!(posterior_density(1.0, 3, 2, 1.0, 1.0).unwrap(), 0.0);
    // Negative exponents diverge there.
    assert_eq!(posterior_density(0.0, 0, 1, 0.5, 1.0).unwrap(), f64::INFINITY);
    assert_eq!(posterior_density(1.0, 1, 0, 1.0, 0.5).unwrap(), f64::INFINITY);
}

#[test]
fn confidence_is_calibrated_against_the_prior() {
    // Draw the true feasible fraction from the prior, simulate outcomes,
    // and score the reported tail probability at the truth. That score is
    // uniform when the posterior update is exact, so the 0.95 quantile
    // must capture ~95% of replicas.
    let reps = 1000usize;
    let trials = 60usize;
    let mut below = 0usize;
    let mut sum = 0.0;
    for rep in 0..reps {
        let mut rng = rng_for(777, rep as u64);
        let z_true: f64 = rng.random_range(0.0..1.0);
        let mut n_f = 0u64;
        for _ in 0..trials {
            if rng.random_bool(z_true) {
                n_f += 1;
            }
        }
        let c = prob_at_least(z_true, n_f, trials as u64 - n_f, 1.0, 1.0).unwrap();
        sum += c;
        if c <= 0.95 {
            below += 1;
        }
    }
    let mean = sum / reps as f64;
    assert!(
        (mean - 0.5).abs() <= 0.046,
        "mean tail probability {mean}, want 0.5"
    );
    assert!(
        (915..=985).contains(&below),
        "{below}/{reps} replicas below the 0.95 quantile, want ~950"
    );
}

fn run_uniform_plan(seed: u64) -> (FeasibilityCertificate, Vec<SampleOutcome>) {
    let policy = NumericPolicy::default();
    let model = additive_model(policy);
    let plan = SamplePlan::UniformRegion {
        region: StateRegion::segway_default(),
        n: 60,
    };
    sample_feasibility(
        &model,
        &SafetyIndex::hand(0.1),
        &GammaSpec::default(),
        0.01,
        SolverKind::Additive,
        &plan,
        1.0,
        1.0,
        0.999,
        seed,
        &MultiplicativeOptions::default(),
        &policy,
    )
    .unwrap()
}

fn same_outcomes(a: &[SampleOutcome], b: &[SampleOutcome]) -> bool {
    a.len() == b.len()
        && a.iter().zip(b).all(|(x, y)| {
            x.feasible == y.feasible
                && x.state
                    .as_slice()
                    .iter()
                    .zip(y.state.as_slice())
                    .all(|(p, q)| p.to_bits() == q.to_bits())
        })
}

#[test]
fn uniform_plan_is_deterministic_per_seed() {
    let (cert_a, log_a) = run_uniform_plan(5);
    let (cert_b, log_b) = run_uniform_plan(5);
    assert_eq!(log_a.len(), 60);
    assert_eq!(cert_a.n_feasible + cert_a.n_infeasible, 60);
    assert_eq!(cert_a.n_feasible, cert_b.n_feasible);
    assert_eq!(cert_a.confidence.to_bits(), cert_b.confidence.to_bits());
    assert!(same_outcomes(&log_a, &log_b));

    let rebuilt = FeasibilityCertificate::new(
        cert_a.n_feasible,
        cert_a.n_infeasible,
        cert_a.prior_alpha,
        cert_a.prior_beta,
        cert_a.z_target,
    )
    .unwrap();
    assert_eq!(rebuilt.confidence.to_bits(), cert_a.confidence.to_bits());

    let (_, log_c) = run_uniform_plan(6);
    assert!(!same_outcomes(&log_a, &log_c), "different seeds, same draws");
}

#[cfg(feature = "parallel")]
#[test]
fn uniform_plan_does_not_depend_on_thread_count() {
    let pool_one = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .unwrap();
    let pool_four = rayon::ThreadPoolBuilder::new()
        .num_threads(4)
        .build()
        .unwrap();
    let (cert_a, log_a) = pool_one.install(|| run_uniform_plan(5));
    let (cert_b, log_b) = pool_four.install(|| run_uniform_plan(5));
    assert_eq!(cert_a.n_feasible, cert_b.n_feasible);
    assert_eq!(cert_a.confidence.to_bits(), cert_b.confidence.to_bits());
    assert!(same_outcomes(&log_a, &log_b));
}

#[test]
fn trajectory_plan_logs_every_visited_state() {
    let policy = NumericPolicy::default();
    let model = additive_model(policy);
    let plan = SamplePlan::Trajectory {
        region: StateRegion::segway_default(),
        n_rollouts: 2,
        steps_per_rollout: 40,
        dt: 0.01,
        controller: NominalController::default(),
    };
    assert_eq!(plan.total_states(), 80);
    let run = |seed: u64| {
        sample_feasibility(
            &model,
            &SafetyIndex::hand(0.1),
            &GammaSpec::default(),
            0.01,
            SolverKind::Additive,
            &plan,
            1.0,
            1.0,
            0.999,
            seed,
            &MultiplicativeOptions::default(),
            &policy,
        )
        .unwrap()
    };
    let (cert_a, log_a) = run(11);
    let (_, log_b) = run(11);
    let (_, log_c) = run(12);
    // Rollouts that fall over stop early, so the plan size is an upper
    // bound on the number of recorded states.
    assert!(!log_a.is_empty() && log_a.len() <= 80, "{} states", log_a.len());
    assert_eq!(cert_a.n_feasible + cert_a.n_infeasible, log_a.len() as u64);
    assert!(same_outcomes(&log_a, &log_b));
    assert!(!same_outcomes(&log_a, &log_c));
}

#[test]
fn bad_plans_and_domains_are_rejected() {
    assert!(StateRegion::new(vec![0.0, 1.0], vec![0.0, 0.5]).is_err());
    assert!(StateRegion::new(vec![0.0], vec![f64::NAN]).is_err());
    assert!(prob_at_least(1.5, 1, 1, 1.0, 1.0).is_err());
    assert!(prob_at_least(0.5, 1, 1, 0.0, 1.0).is_err());
    assert!(posterior_density(-0.1, 1, 1, 1.0, 1.0).is_err());

    let policy = NumericPolicy::default();
    let model = additive_model(policy);
    let bad_dim = SamplePlan::UniformRegion {
        region: StateRegion::new(vec![0.0], vec![1.0]).unwrap(),
        n: 4,
    };
    let bad_dt = SamplePlan::Trajectory {
        region: StateRegion::segway_default(),
        n_rollouts: 1,
        steps_per_rollout: 4,
        dt: 0.0,
        controller: NominalController::default(),
    };
    for plan in [bad_dim, bad_dt] {
        assert!(sample_feasibility(
            &model,
            &SafetyIndex::hand(0.1),
            &GammaSpec::default(),
            0.01,
            SolverKind::Additive,
            &plan,
            1.0,
            1.0,
            0.999,
            0,
            &MultiplicativeOptions::default(),
            &policy,
        )
        .is_err());
    }
}
