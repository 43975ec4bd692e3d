use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use rebasin_core::continual::{avg_accuracy, forgetting, fuse, ReplayBuffer, StreamReport};
use rebasin_core::data::sample_plan;
use rebasin_core::nn::{Activation, Dataset, Init, Matrix, Mlp};
use rebasin_core::rebasin::{apply_plan, TransportPlan};

fn model(seed: u64) -> Mlp {
    Mlp::init(&[3, 5, 4, 2], Activation::Relu, Init::StandardNormal, seed).unwrap()
}

fn delta(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
    a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol * (1.0 + x.abs().max(y.abs())))
}

fn labelled(counts: &[usize]) -> Dataset {
    let labels: Vec<usize> = counts.iter().enumerate().flat_map(|(c, &n)| std::iter::repeat_n(c, n)).collect();
    let x = Matrix::from_fn(labels.len(), 2, |r, c| (r * 2 + c) as f64);
    Dataset::from_labels(x, &labels, counts.len()).unwrap()
}

/// Row `k` has `k + 1` entries, each at least its predecessor in the same column.
fn monotone_matrix() -> impl Strategy<Value = Vec<Vec<f64>>> {
    (2usize..7).prop_flat_map(|e| prop::collection::vec(prop::collection::vec(0.0f64..0.2, e), e)).prop_map(|steps| {
        let e = steps.len();
        let mut acc: Vec<Vec<f64>> = Vec::with_capacity(e);
        for k in 0..e {
            let row = (0..=k)
                .map(|j| {
                    let prev = if j < k { acc[k - 1][j] } else { 0.0 };
                    (prev + steps[k][j]).min(1.0)
                })
                .collect();
            acc.push(row);
        }
        acc
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn fusion_is_affine_in_its_inputs(seed in any::<u64>(), alpha in 0.0f64..=1.0) {
        let theta = model(seed);
        let plan = sample_plan(&theta.hidden_widths(), seed ^ 5).unwrap();
        let d = delta(theta.param_count(), seed ^ 6);
        let fused = fuse(&theta, &plan, &d, alpha).unwrap().flatten();
        let t = theta.flatten();
        let p = apply_plan(&theta, &plan).unwrap().flatten();
        let expected: Vec<f64> = (0..t.len()).map(|i| (1.0 - alpha) * t[i] + alpha * p[i] + d[i]).collect();
        prop_assert!(close(&fused, &expected, 1e-15));

        // Additive in δ.
        let zero = vec![0.0; d.len()];
        let base = fuse(&theta, &plan, &zero, alpha).unwrap().flatten();
        let shifted: Vec<f64> = base.iter().zip(&d).map(|(b, x)| b + x).collect();
        prop_assert!(close(&fused, &shifted, 1e-14));
    }

    #[test]
    fn fusion_endpoints(seed in any::<u64>()) {
        let theta = model(seed);
        let plan = sample_plan(&theta.hidden_widths(), seed ^ 7).unwrap();
        let zero = vec![0.0; theta.param_count()];
        prop_assert_eq!(fuse(&theta, &plan, &zero, 0.0).unwrap(), theta.clone());
        prop_assert_eq!(fuse(&theta, &plan, &zero, 1.0).unwrap(), apply_plan(&theta, &plan).unwrap());
        let id = TransportPlan::identity(&theta.hidden_widths());
        let kept = fuse(&theta, &id, &zero, 0.8).unwrap().flatten();
        prop_assert!(close(&kept, &theta.flatten(), 1e-15));
    }

    #[test]
    fn replay_keeps_min_of_k_and_class_count(counts in prop::collection::vec(1usize..12, 2..6), k in 0usize..8, seed in any::<u64>()) {
        let data = labelled(&counts);
        let mut buf = ReplayBuffer::new(k);
        buf.close_episode(&data, seed).unwrap();
        let per_episode: usize = counts.iter().map(|&c| c.min(k)).sum();
        prop_assert_eq!(buf.len(), per_episode);
        buf.close_episode(&data, seed ^ 1).unwrap();
        prop_assert_eq!(buf.len(), 2 * per_episode);

        let mut again = ReplayBuffer::new(k);
        again.close_episode(&data, seed).unwrap();
        again.close_episode(&data, seed ^ 1).unwrap();
        prop_assert_eq!(buf.contents().unwrap(), again.contents().unwrap());
    }

    #[test]
    fn improving_streams_show_no_forgetting(acc in monotone_matrix()) {
        let report = StreamReport::new("m", 0, acc).unwrap();
        for e in 2..=report.episodes() {
            prop_assert!(forgetting(&report, e).unwrap() <= 0.0);
        }
    }

    #[test]
    fn constant_streams_forget_nothing(e in 2usize..8, a in 0.0f64..=1.0) {
        let acc: Vec<Vec<f64>> = (0..e).map(|k| vec![a; k + 1]).collect();
        let report = StreamReport::new("m", 0, acc).unwrap();
        for k in 2..=e {
            prop_assert_eq!(forgetting(&report, k).unwrap(), 0.0);
            prop_assert!((avg_accuracy(&report, k).unwrap() - a).abs() < 1e-15);
        }
    }
}
