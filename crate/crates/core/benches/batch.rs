//! Parallel vs sequential throughput on the two batch workloads the
//! library actually runs: safe-control solves over many states and
//! feasibility checks for certification sampling.

use criterion::{criterion_group, criterion_main, Criterion};
use mm_rssa::cert::{self, SolverKind, StateRegion};
use mm_rssa::exec;
use mm_rssa::mathkit::Vector;
use mm_rssa::model::{
    reference_additive_modes, reference_km_modes, segway_additive_model,
    segway_multiplicative_model, SegwayModel, SegwayParams,
};
use mm_rssa::safety::{GammaSpec, SafetyIndex};
use mm_rssa::solver::{solve_safe_control_additive, MultiplicativeOptions};
use mm_rssa::{ControlBounds, NumericPolicy};

fn additive_model() -> SegwayModel {
    segway_additive_model(
        SegwayParams::default(),
        reference_additive_modes(),
        ControlBounds::symmetric(1, 20.0),
        NumericPolicy::default(),
    )
    .unwrap()
}

fn multiplicative_model() -> SegwayModel {
    segway_multiplicative_model(
        SegwayParams::default(),
        reference_km_modes(),
        ControlBounds::symmetric(1, 20.0),
        NumericPolicy::default(),
    )
    .unwrap()
}

fn probe_states(n: usize, seed: u64) -> Vec<Vector> {
    let region = StateRegion::segway_default();
    (0..n)
        .map(|i| {
            let mut rng = exec::rng_for(seed, i as u64);
            region.sample(&mut rng)
        })
        .collect()
}

fn bench_additive_solves(c: &mut Criterion) {
    let model = additive_model();
    let index = SafetyIndex::hand(0.1);
    let gamma = GammaSpec::default();
    let opts = MultiplicativeOptions::default();
    let policy = NumericPolicy::default();
    let states = probe_states(256, 11);
    let u_ref = Vector::new(vec![8.0]);

    let solve_at = |i: usize| {
        solve_safe_control_additive(
            &states[i],
            &u_ref,
            &model,
            &index,
            &gamma,
            0.01,
            &opts.additive,
            &policy,
        )
        .unwrap()
        .objective
    };

    let mut group = c.benchmark_group("additive_solve_256");
    group.bench_function("parallel", |b| {
        b.iter(|| exec::map_indexed(states.len(), solve_at))
    });
    group.bench_function("sequential", |b| {
        b.iter(|| exec::map_indexed_seq(states.len(), solve_at))
    });
    group.finish();
}

fn bench_feasibility_checks(c: &mut Criterion) {
    let model = multiplicative_model();
    let index = SafetyIndex::hand(0.1);
    let gamma = GammaSpec::default();
    let opts = MultiplicativeOptions::default();
    let policy = NumericPolicy::default();
    let states = probe_states(128, 23);

    let check_at = |i: usize| {
        cert::state_is_feasible(
            &states[i],
            &model,
            &index,
            &gamma,
            0.01,
            SolverKind::Multiplicative,
            &opts,
            &policy,
        )
        .unwrap()
    };

    let mut group = c.benchmark_group("feasibility_check_128");
    group.bench_function("parallel", |b| {
        b.iter(|| exec::map_indexed(states.len(), check_at))
    });
    group.bench_function("sequential", |b| {
        b.iter(|| exec::map_indexed_seq(states.len(), check_at))
    });
    group.finish();
}

criterion_group!(benches, bench_additive_solves, bench_feasibility_checks);
criterion_main!(benches);
