//! Linear-path evaluation between two models: cost curves, barrier and AUC.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Dataset, LossKind, Mlp, Task};
use crate::rebasin::interpolate;

pub const DEFAULT_GRID_POINTS: usize = 25;

/// Costs (and accuracies for classification) along `(1−λ)θ_a + λθ_b`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurveReport {
    lambdas: Vec<f64>,
    costs: Vec<f64>,
    accuracies: Option<Vec<f64>>,
}

impl CurveReport {
    /// `lambdas` must increase strictly from 0 to 1.
    pub fn new(lambdas: Vec<f64>, costs: Vec<f64>, accuracies: Option<Vec<f64>>) -> Result<Self> {
        if lambdas.len() < 2 || lambdas.len() != costs.len() {
            return Err(Error::InvalidInput(format!(
                "curve needs ≥ 2 points and matching lengths, got {} λ and {} costs",
                lambdas.len(),
                costs.len()
            )));
        }
        if accuracies.as_ref().is_some_and(|a| a.len() != lambdas.len()) {
            return Err(Error::InvalidInput("accuracy length differs from grid".into()));
        }
        if lambdas[0] != 0.0 || *lambdas.last().unwrap() != 1.0 || lambdas.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidInput("λ grid must increase strictly from 0 to 1".into()));
        }
        Ok(Self {
            lambdas,
            costs,
            accuracies,
        })
    }

    pub fn lambdas(&self) -> &[f64] {
        &self.lambdas
    }

    pub fn costs(&self) -> &[f64] {
        &self.costs
    }

    pub fn accuracies(&self) -> Option<&[f64]> {
        self.accuracies.as_deref()
    }

    pub fn cost_a(&self) -> f64 {
        self.costs[0]
    }

    pub fn cost_b(&self) -> f64 {
        *self.costs.last().unwrap()
    }

    /// `(1−λ)𝒞(θ_a) + λ𝒞(θ_b)` at each grid point.
    pub fn chord(&self) -> Vec<f64> {
        let (ca, cb) = (self.cost_a(), self.cost_b());
        self.lambdas.iter().map(|&l| (1.0 - l) * ca + l * cb).collect()
    }

    /// Curve minus chord.
    pub fn deviation(&self) -> Vec<f64> {
        self.costs.iter().zip(self.chord()).map(|(c, h)| c - h).collect()
    }

    /// Columns `lambda,cost,chord,deviation[,accuracy]`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["lambda", "cost", "chord", "deviation"];
        if self.accuracies.is_some() {
            header.push("accuracy");
        }
        w.write_record(&header).map_err(csv_err)?;
        let chord = self.chord();
        let dev = self.deviation();
        for i in 0..self.lambdas.len() {
            let mut row = vec![
                self.lambdas[i].to_string(),
                self.costs[i].to_string(),
                chord[i].to_string(),
                dev[i].to_string(),
            ];
            if let Some(acc) = &self.accuracies {
                row.push(acc[i].to_string());
            }
            w.write_record(&row).map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

/// Evenly spaced grid of `points` values covering `[0, 1]`.
pub fn grid(points: usize) -> Vec<f64> {
    let last = (points - 1) as f64;
    (0..points).map(|i| if i + 1 == points { 1.0 } else { i as f64 / last }).collect()
}

pub fn cost_curve(a: &Mlp, b: &Mlp, data: &Dataset, loss: LossKind, grid_points: usize) -> Result<CurveReport> {
    if grid_points < 2 {
        return Err(Error::InvalidInput("grid needs at least 2 points".into()));
    }
    a.same_architecture(b)?;
    data.check_loss(loss)?;
    let lambdas = grid(grid_points);
    let mut costs = Vec::with_capacity(grid_points);
    let mut accs = Vec::with_capacity(grid_points);
    for &l in &lambdas {
        let m = interpolate(a, b, l)?;
        costs.push(m.cost(data, loss)?);
        if data.task() == Task::Classification {
            accs.push(m.accuracy(data)?);
        }
    }
    let accuracies = (data.task() == Task::Classification).then_some(accs);
    CurveReport::new(lambdas, costs, accuracies)
}

/// Largest excess of the curve over its chord on the grid. A lower bound on
/// the supremum over the continuous segment; never negative since both
/// endpoints contribute 0.
pub fn barrier(curve: &CurveReport) -> f64 {
    curve.deviation().into_iter().fold(0.0, f64::max)
}

/// Trapezoidal integral of curve minus chord over `λ ∈ [0, 1]`. Signed: it
/// goes negative where the path runs below the chord.
pub fn auc(curve: &CurveReport) -> f64 {
    let dev = curve.deviation();
    curve
        .lambdas
        .windows(2)
        .zip(dev.windows(2))
        .map(|(l, d)| 0.5 * (l[1] - l[0]) * (d[0] + d[1]))
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Activation, Init, Matrix};

    fn curve(costs: &[f64]) -> CurveReport {
        CurveReport::new(grid(costs.len()), costs.to_vec(), None).unwrap()
    }

    #[test]
    fn hand_examples() {
        assert_eq!(barrier(&curve(&[1.0, 3.0, 2.0])), 1.5);
        assert_eq!(auc(&curve(&[0.0, 1.0, 0.0])), 0.5);
        assert_eq!(barrier(&curve(&[2.0; 5])), 0.0);
        assert_eq!(auc(&curve(&[2.0; 5])), 0.0);
        // Below the chord: barrier clamps at the endpoints, AUC stays signed.
        let dip = curve(&[1.0, 0.0, 1.0]);
        assert_eq!(barrier(&dip), 0.0);
        assert_eq!(auc(&dip), -0.5);
    }

    #[test]
    fn grid_is_exact_at_ends() {
        let g = grid(25);
        assert_eq!(g.len(), 25);
        assert_eq!((g[0], g[24]), (0.0, 1.0));
        assert_eq!(g[12], 0.5);
        assert_eq!(grid(2), vec![0.0, 1.0]);
    }

    #[test]
    fn rejects_malformed_curves() {
        assert!(CurveReport::new(vec![0.0], vec![1.0], None).is_err());
        assert!(CurveReport::new(vec![0.0, 0.6, 0.5, 1.0], vec![0.0; 4], None).is_err());
        assert!(CurveReport::new(vec![0.1, 1.0], vec![0.0; 2], None).is_err());
        assert!(CurveReport::new(vec![0.0, 1.0], vec![0.0; 2], Some(vec![1.0])).is_err());
    }

    #[test]
    fn curve_matches_direct_composition() {
        let a = Mlp::init(&[2, 3, 2], Activation::Relu, Init::Glorot, 1).unwrap();
        let b = Mlp::init(&[2, 3, 2], Activation::Relu, Init::Glorot, 2).unwrap();
        let x = Matrix::from_fn(10, 2, |r, c| (r * 2 + c) as f64 / 7.0 - 1.0);
        let labels: Vec<usize> = (0..10).map(|r| r % 2).collect();
        let data = Dataset::from_labels(x, &labels, 2).unwrap();
        let c = cost_curve(&a, &b, &data, LossKind::CrossEntropy, 5).unwrap();
        for (i, &l) in c.lambdas().iter().enumerate() {
            let m = interpolate(&a, &b, l).unwrap();
            assert_eq!(c.costs()[i], m.cost(&data, LossKind::CrossEntropy).unwrap());
            assert_eq!(c.accuracies().unwrap()[i], m.accuracy(&data).unwrap());
        }
        assert_eq!(c.cost_a(), a.cost(&data, LossKind::CrossEntropy).unwrap());
        let same = cost_curve(&a, &a, &data, LossKind::CrossEntropy, 4).unwrap();
        assert!(same.costs().iter().all(|&v| v == same.cost_a()));
        assert!(cost_curve(&a, &b, &data, LossKind::CrossEntropy, 1).is_err());
    }

    #[test]
    fn csv_has_expected_columns() {
        let mut buf = Vec::new();
        curve(&[1.0, 3.0, 2.0]).write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("lambda,cost,chord,deviation"));
        assert_eq!(lines.nth(1), Some("0.5,3,1.5,1.5"));
    }
}
