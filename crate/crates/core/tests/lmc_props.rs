use proptest::prelude::*;

use rebasin_core::lmc::{auc, barrier, grid, CurveReport};

fn curve() -> impl Strategy<Value = Vec<f64>> {
    (2usize..30).prop_flat_map(|n| prop::collection::vec(-5.0f64..5.0, n))
}

fn report(costs: Vec<f64>) -> CurveReport {
    CurveReport::new(grid(costs.len()), costs, None).unwrap()
}

proptest! {
    #[test]
    fn barrier_is_nonnegative(costs in curve()) {
        prop_assert!(barrier(&report(costs)) >= 0.0);
    }

    #[test]
    fn swapping_endpoints_reverses_the_curve(costs in curve()) {
        let fwd = report(costs.clone());
        let rev = report(costs.into_iter().rev().collect());
        prop_assert!((barrier(&fwd) - barrier(&rev)).abs() < 1e-12);
        prop_assert!((auc(&fwd) - auc(&rev)).abs() < 1e-12);
    }

    #[test]
    fn constant_offsets_cancel(costs in curve(), c in -100.0f64..100.0) {
        let base = report(costs.clone());
        let shifted = report(costs.iter().map(|v| v + c).collect());
        prop_assert!((barrier(&base) - barrier(&shifted)).abs() < 1e-9);
        prop_assert!((auc(&base) - auc(&shifted)).abs() < 1e-9);
    }

    #[test]
    fn auc_is_bounded_by_barrier_above_the_chord(bumps in curve(), ca in -3.0f64..3.0, cb in -3.0f64..3.0) {
        let n = bumps.len();
        let lambdas = grid(n);
        let costs: Vec<f64> = (0..n)
            .map(|i| {
                let chord = (1.0 - lambdas[i]) * ca + lambdas[i] * cb;
                if i == 0 { ca } else if i + 1 == n { cb } else { chord + bumps[i].abs() }
            })
            .collect();
        let r = CurveReport::new(lambdas, costs, None).unwrap();
        prop_assert!(auc(&r) <= barrier(&r) + 1e-12);
    }
}
