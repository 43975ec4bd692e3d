//! Dataset construction: polynomial regression tasks, IDX ingestion, image
//! rotation and episode streams, random plans, per-class subsampling.

mod idx;
mod images;

use std::collections::BTreeMap;
use std::io::Write;

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

pub use idx::{encode_idx, load_idx, parse_idx, write_idx, IMAGES_MAGIC, LABELS_MAGIC};
pub use images::{rotate, ImageSet, CLASSES};

use crate::continual::Episode;
use crate::error::{Error, Result};
use crate::nn::{Dataset, Matrix, Task};
use crate::rebasin::TransportPlan;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolyKind {
    /// `y = x + 3` on `x ∈ (−4, −2)`.
    Pol1,
    /// `y = (x − 3)³` on `x ∈ (2, 4)`.
    Pol3,
}

impl PolyKind {
    pub fn interval(self) -> (f64, f64) {
        match self {
            PolyKind::Pol1 => (-4.0, -2.0),
            PolyKind::Pol3 => (2.0, 4.0),
        }
    }

    pub fn target(self, x: f64) -> f64 {
        match self {
            PolyKind::Pol1 => x + 3.0,
            PolyKind::Pol3 => (x - 3.0).powi(3),
        }
    }
}

/// `n` points with `x` uniform on the interval and `y = target(x) + 𝒩(0, noise_sd²)`.
pub fn gen_poly(kind: PolyKind, n: usize, noise_sd: f64, seed: u64) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::InvalidInput("need at least one sample".into()));
    }
    if !(noise_sd >= 0.0 && noise_sd.is_finite()) {
        return Err(Error::InvalidInput(format!("noise sd {noise_sd} must be finite and ≥ 0")));
    }
    let noise = Normal::new(0.0, noise_sd).expect("sd checked");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (lo, hi) = kind.interval();
    let mut xs = Vec::with_capacity(n);
    let mut ys = Vec::with_capacity(n);
    for _ in 0..n {
        let x = loop {
            // The interval is open.
            let x = rng.random_range(lo..hi);
            if x != lo {
                break x;
            }
        };
        let eps = if noise_sd == 0.0 { 0.0 } else { noise.sample(&mut rng) };
        xs.push(x);
        ys.push(kind.target(x) + eps);
    }
    Dataset::new(Matrix::column(xs)?, Matrix::column(ys)?, Task::Regression)
}

/// Inputs then targets, one row per example, headed `x0..,y0..`.
pub fn write_dataset_csv<W: Write>(data: &Dataset, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let header: Vec<String> = (0..data.input_dim())
        .map(|i| format!("x{i}"))
        .chain((0..data.output_dim()).map(|i| format!("y{i}")))
        .collect();
    w.write_record(&header).map_err(std::io::Error::other)?;
    for r in 0..data.len() {
        let row = data
            .inputs()
            .row(r)
            .iter()
            .chain(data.targets().row(r))
            .map(f64::to_string);
        w.write_record(row).map_err(std::io::Error::other)?;
    }
    w.flush()?;
    Ok(())
}

/// Uniformly random hard plan (one Fisher–Yates shuffle per layer).
pub fn sample_plan(hidden_widths: &[usize], seed: u64) -> Result<TransportPlan> {
    if hidden_widths.contains(&0) {
        return Err(Error::InvalidInput("plan widths must be ≥ 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let perms: Vec<Vec<usize>> = hidden_widths
        .iter()
        .map(|&w| {
            let mut p: Vec<usize> = (0..w).collect();
            p.shuffle(&mut rng);
            p
        })
        .collect();
    TransportPlan::from_permutations(&perms)
}

/// Up to `k` rows per class, drawn without replacement, in shuffled order.
pub fn subsample_per_class(data: &Dataset, k: usize, seed: u64) -> Result<Dataset> {
    if data.task() != Task::Classification {
        return Err(Error::Config("per-class subsampling needs a classification dataset".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (row, label) in data.labels()?.into_iter().enumerate() {
        by_class.entry(label).or_default().push(row);
    }
    let mut picked = Vec::new();
    for rows in by_class.values() {
        let take = k.min(rows.len());
        picked.extend(index::sample(&mut rng, rows.len(), take).into_iter().map(|i| rows[i]));
    }
    picked.shuffle(&mut rng);
    data.select(&picked)
}

/// Rotation of episode `e` in a stream of `episodes` spanning 0°–180°.
pub fn episode_angle(e: usize, episodes: usize) -> f64 {
    if episodes <= 1 {
        0.0
    } else {
        e as f64 * 180.0 / (episodes - 1) as f64
    }
}

/// Episode `e` rotates fresh train/test draws from `base` by
/// [`episode_angle`]; train and test rows are disjoint within an episode.
pub fn make_rotated_stream(
    base: &ImageSet,
    episodes: usize,
    train_per_episode: usize,
    test_per_episode: usize,
    seed: u64,
) -> Result<Vec<Episode>> {
    if episodes == 0 {
        return Err(Error::InvalidInput("stream needs at least one episode".into()));
    }
    let need = train_per_episode + test_per_episode;
    if need > base.len() || train_per_episode == 0 || test_per_episode == 0 {
        return Err(Error::InvalidInput(format!(
            "{train_per_episode}+{test_per_episode} rows per episode from a set of {}",
            base.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..episodes)
        .map(|e| {
            let rows = index::sample(&mut rng, base.len(), need).into_vec();
            let angle = episode_angle(e, episodes);
            let train = rotate(&base.select(&rows[..train_per_episode])?, angle).to_dataset()?;
            let test = rotate(&base.select(&rows[train_per_episode..])?, angle).to_dataset()?;
            Episode::new(e, train, test)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sinkhorn::permutation_of;

    #[test]
    fn noiseless_polys_are_exact() {
        let d = gen_poly(PolyKind::Pol1, 50, 0.0, 1).unwrap();
        for r in 0..50 {
            let x = d.inputs().get(r, 0);
            assert!(x > -4.0 && x < -2.0);
            assert_eq!(d.targets().get(r, 0), x + 3.0);
        }
        assert_eq!(PolyKind::Pol3.target(3.0), 0.0);
        let d = gen_poly(PolyKind::Pol3, 50, 0.0, 1).unwrap();
        assert!((0..50).all(|r| d.targets().get(r, 0) == (d.inputs().get(r, 0) - 3.0).powi(3)));
    }

    #[test]
    fn noise_statistics() {
        let d = gen_poly(PolyKind::Pol1, 10_000, 0.05, 7).unwrap();
        let res: Vec<f64> = (0..d.len()).map(|r| d.targets().get(r, 0) - d.inputs().get(r, 0) - 3.0).collect();
        let mean = res.iter().sum::<f64>() / res.len() as f64;
        let sd = (res.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (res.len() - 1) as f64).sqrt();
        assert!(mean.abs() < 0.002, "{mean}");
        assert!((sd - 0.05).abs() < 0.005, "{sd}");
        assert!(gen_poly(PolyKind::Pol1, 3, -1.0, 0).is_err());
    }

    #[test]
    fn plan_sampling() {
        let p = sample_plan(&[1, 5], 3).unwrap();
        assert_eq!(p.mats()[0], Matrix::identity(1));
        assert!(permutation_of(&p.mats()[1]).is_some());
        assert_eq!(sample_plan(&[1, 5], 3).unwrap(), p);
    }

    #[test]
    fn subsampling_caps_per_class() {
        let x = Matrix::from_fn(9, 1, |r, _| r as f64);
        let labels = [0, 0, 0, 0, 1, 1, 2, 2, 2];
        let d = Dataset::from_labels(x, &labels, 3).unwrap();
        let s = subsample_per_class(&d, 1, 4).unwrap();
        let mut got = s.labels().unwrap();
        got.sort_unstable();
        assert_eq!(got, vec![0, 1, 2]);
        let all = subsample_per_class(&d, 10, 4).unwrap();
        let mut xs: Vec<f64> = (0..9).map(|r| all.inputs().get(r, 0)).collect();
        xs.sort_by(f64::total_cmp);
        assert_eq!(xs, (0..9).map(f64::from).collect::<Vec<_>>());
        let reg = Dataset::new(Matrix::scalar(0.0), Matrix::scalar(0.0), Task::Regression).unwrap();
        assert!(matches!(subsample_per_class(&reg, 1, 0), Err(Error::Config(_))));
    }

    #[test]
    fn angles() {
        assert!((episode_angle(1, 20) - 9.473_684_210_526_316).abs() < 1e-12);
        assert_eq!(episode_angle(0, 1), 0.0);
        assert_eq!((0..3).map(|e| episode_angle(e, 3)).collect::<Vec<_>>(), vec![0.0, 90.0, 180.0]);
    }

    #[test]
    fn stream_rows_are_disjoint_and_checked() {
        let px: Vec<f64> = (0..20 * 4).map(|k| k as f64 / 80.0).collect();
        let labels: Vec<u8> = (0..20).map(|i| (i % 10) as u8).collect();
        let base = ImageSet::new(px, labels, 2, 2).unwrap();
        let eps = make_rotated_stream(&base, 1, 12, 8, 0).unwrap();
        // Every base image is distinct, so disjointness shows as a full cover.
        let mut firsts: Vec<f64> = (0..12)
            .map(|r| eps[0].train.inputs().get(r, 0))
            .chain((0..8).map(|r| eps[0].test.inputs().get(r, 0)))
            .collect();
        firsts.sort_by(f64::total_cmp);
        firsts.dedup();
        assert_eq!(firsts.len(), 20);
        assert!(make_rotated_stream(&base, 2, 15, 6, 0).is_err());
    }
}
