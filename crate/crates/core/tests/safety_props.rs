//! Property tests for the safety-index family: branch containment,
//! gradients against finite differences, and the margin function.

use mm_rssa::cert::StateRegion;
use mm_rssa::exec::rng_for;
use mm_rssa::mathkit::Vector;
use mm_rssa::safety::{GammaSpec, IndexParams, SafetyIndex};
use proptest::prelude::*;

fn index_with(alpha: f64, k_v: f64, beta: f64) -> SafetyIndex {
    SafetyIndex::with_margin(
        0.1,
        IndexParams {
            alpha,
            k_v,
            beta,
        },
    )
    .unwrap()
}

/// phi <= 0 must imply phi0 <= 0: the margin construction only ever
/// shrinks the safe set.
#[test]
fn zero_sublevel_contained_in_specification_set() {
    let region = StateRegion::new(
        vec![-1.0, -0.5, -3.0, -3.0],
        vec![1.0, 0.5, 3.0, 3.0],
    )
    .unwrap();
    let indices = [
        SafetyIndex::hand(0.1),
        index_with(0.15, 4.17, 0.55),
        index_with(2.5, 0.3, 0.01),
        SafetyIndex::tilt_only(0.1),
    ];
    let mut rng = rng_for(21, 0);
    for _ in 0..100_000 {
        let x = region.sample(&mut rng);
        for index in &indices {
            if index.value(&x) <= 0.0 {
                assert!(
                    index.phi0(&x) <= 0.0,
                    "phi <= 0 but phi0 = {} at {:?}",
                    index.phi0(&x),
                    x.as_slice()
                );
            }
        }
    }
}

proptest! {
    #[test]
    fn gradient_matches_central_differences(
        alpha in 0.1f64..5.0,
        k_v in 0.1f64..5.0,
        beta in 0.001f64..1.0,
        tilt in -0.5f64..0.5,
        dphi in -3.0f64..3.0,
        dp in -3.0f64..3.0,
    ) {
        // The kink set (branch ties, tilt sign flips) is excluded: the
        // gradient there is defined by convention, not by a limit.
        prop_assume!(tilt.abs() >= 3e-4);
        let index = index_with(alpha, k_v, beta);
        let x = Vector::new(vec![0.3, tilt, dp, dphi]);
        let phi0 = index.phi0(&x);
        let rate = index.value(&x);
        // Skip states within FD reach of the branch tie.
        prop_assume!((rate - phi0).abs() >= 1e-4 || rate == phi0);

        let grad = index.gradient(&x);
        // phi depends only on tilt and tilt rate.
        prop_assert_eq!(grad[0], 0.0);
        prop_assert_eq!(grad[2], 0.0);

        for (i, h) in [(1usize, 1e-6), (3usize, 1e-6)] {
            let mut xp = x.clone();
            xp[i] += h;
            let mut xm = x.clone();
            xm[i] -= h;
            // Keep both probes on the same branch and the same tilt sign.
            if i == 1 && (xp[1].signum() != xm[1].signum()) {
                continue;
            }
            let fd = (index.value(&xp) - index.value(&xm)) / (2.0 * h);
            let scale = grad[i].abs().max(1.0);
            prop_assert!(
                (grad[i] - fd).abs() <= 1e-5 * scale,
                "component {i}: grad {} vs fd {fd} (alpha {alpha} tilt {tilt})",
                grad[i]
            );
        }
    }

    #[test]
    fn gamma_is_odd_linear_increasing(slope in 0.01f64..10.0, v in -100.0f64..100.0, w in -100.0f64..100.0) {
        let gamma = GammaSpec::new(slope).unwrap();
        prop_assert!((gamma.eval(-v) + gamma.eval(v)).abs() <= 1e-12 * (1.0 + v.abs()));
        prop_assert!(
            (gamma.eval(v + w) - gamma.eval(v) - gamma.eval(w)).abs()
                <= 1e-9 * (1.0 + v.abs() + w.abs())
        );
        if v > 0.0 {
            prop_assert!(gamma.eval(v) > 0.0);
        }
        if v < w {
            prop_assert!(gamma.eval(v) < gamma.eval(w));
        }
        prop_assert_eq!(gamma.eval(0.0), 0.0);
    }

    #[test]
    fn value_agrees_with_reported_branch(
        alpha in 0.1f64..5.0,
        k_v in 0.1f64..5.0,
        beta in 0.001f64..1.0,
        tilt in -0.5f64..0.5,
        dphi in -3.0f64..3.0,
    ) {
        use mm_rssa::safety::IndexBranch;
        let index = index_with(alpha, k_v, beta);
        let x = Vector::new(vec![0.0, tilt, 0.0, dphi]);
        let v = index.value(&x);
        let phi0 = index.phi0(&x);
        let sgn = if tilt > 0.0 { 1.0 } else if tilt < 0.0 { -1.0 } else { 0.0 };
        let rate = -(0.1f64.powf(alpha)) + tilt.abs().powf(alpha) + k_v * sgn * dphi + beta;
        match index.active_branch(&x) {
            IndexBranch::Tilt => {
                prop_assert!((v - phi0).abs() <= 1e-12 * (1.0 + v.abs()));
                prop_assert!(phi0 >= rate - 1e-12 * (1.0 + rate.abs()));
            }
            IndexBranch::Rate => {
                prop_assert!((v - rate).abs() <= 1e-12 * (1.0 + v.abs()));
                prop_assert!(rate >= phi0 - 1e-12 * (1.0 + phi0.abs()));
            }
        }
    }

    #[test]
    fn rejects_out_of_range_parameters(alpha in -5.0f64..0.0) {
        let bad = IndexParams { alpha, k_v: 1.0, beta: 0.1 };
        let built = SafetyIndex::with_margin(0.1, bad);
        prop_assert!(built.is_err());
    }
}
