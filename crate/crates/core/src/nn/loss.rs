//! Loss functions evaluated outside the tape.

use serde::{Deserialize, Serialize};

use super::dataset::Task;
use super::matrix::Matrix;
use crate::error::{dim_err, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// Mean squared error, averaged over every output entry.
    Mse,
    /// Softmax over the network output followed by cross-entropy.
    CrossEntropy,
}

pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

pub fn softmax_row(xs: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(xs);
    xs.iter().map(|x| (x - lse).exp()).collect()
}

pub fn mse(pred: &Matrix, target: &Matrix) -> Result<f64> {
    pred.same_shape(target)?;
    let n = pred.len() as f64;
    Ok(pred
        .as_slice()
        .iter()
        .zip(target.as_slice())
        .map(|(p, t)| (p - t) * (p - t))
        .sum::<f64>()
        / n)
}

pub fn softmax_cross_entropy(logits: &Matrix, target: &Matrix) -> Result<f64> {
    if logits.shape() != target.shape() {
        return Err(dim_err!(
            "logits {:?} vs targets {:?}",
            logits.shape(),
            target.shape()
        ));
    }
    let mut total = 0.0;
    for r in 0..logits.rows() {
        let z = logits.row(r);
        let lse = log_sum_exp(z);
        total += z
            .iter()
            .zip(target.row(r))
            .map(|(zi, ti)| ti * (lse - zi))
            .sum::<f64>();
    }
    Ok(total / logits.rows() as f64)
}

impl LossKind {
    /// Mse for regression, cross-entropy for classification.
    pub fn for_task(task: Task) -> Self {
        match task {
            Task::Regression => LossKind::Mse,
            Task::Classification => LossKind::CrossEntropy,
        }
    }

    pub fn evaluate(self, output: &Matrix, target: &Matrix) -> Result<f64> {
        match self {
            LossKind::Mse => mse(output, target),
            LossKind::CrossEntropy => softmax_cross_entropy(output, target),
        }
    }
}
