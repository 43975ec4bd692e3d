use std::rc::Rc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::dataset::Dataset;
use super::loss::LossKind;
use super::matrix::Matrix;
use super::mlp::{forward_on_tape, loss_on_tape, Mlp};
use super::optim::{OptimConfig, Optimizer};
use super::tape::Tape;
use crate::error::{Error, Result};

/// Seeded shuffled mini-batch index stream, reshuffled (Fisher–Yates) on every pass.
pub struct BatchSampler {
    order: Vec<usize>,
    batch_size: usize,
    cursor: usize,
    rng: ChaCha8Rng,
}

impl BatchSampler {
    pub fn new(n: usize, batch_size: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        Self {
            order,
            batch_size: batch_size.clamp(1, n.max(1)),
            cursor: 0,
            rng,
        }
    }

    /// Batches per full pass.
    pub fn batches_per_epoch(&self) -> usize {
        self.order.len().div_ceil(self.batch_size)
    }

    /// Next batch of row indices; the final batch of a pass may be short.
    pub fn next_batch(&mut self) -> Vec<usize> {
        if self.cursor >= self.order.len() {
            self.order.shuffle(&mut self.rng);
            self.cursor = 0;
        }
        let end = (self.cursor + self.batch_size).min(self.order.len());
        let batch = self.order[self.cursor..end].to_vec();
        self.cursor = end;
        batch
    }
}

/// Loss and parameter gradients of `model` on one batch.
pub fn loss_and_grad(model: &Mlp, batch: &Dataset, loss: LossKind) -> Result<(f64, Vec<Matrix>)> {
    let tape = Tape::new();
    let leaves: Vec<_> = model.params().into_iter().map(|p| tape.leaf(p.clone())).collect();
    let layers: Vec<_> = leaves.chunks(2).map(|c| (c[0], c[1])).collect();
    let x = tape.constant(batch.inputs().clone());
    let out = forward_on_tape(&layers, model.activation(), x)?;
    let cost = loss_on_tape(out, Rc::new(batch.targets().clone()), loss)?;
    let grads = tape.gradients(cost, &leaves)?;
    Ok((cost.item(), grads))
}

/// Mini-batch training. Returns the trained model and the per-epoch mean
/// training loss.
pub fn train(
    model: &Mlp,
    data: &Dataset,
    loss: LossKind,
    optim: &OptimConfig,
    epochs: usize,
    batch_size: usize,
    seed: u64,
) -> Result<(Mlp, Vec<f64>)> {
    data.check_loss(loss)?;
    model.check_data(data)?;
    if batch_size == 0 || batch_size > data.len() {
        return Err(Error::Config(format!(
            "batch size {batch_size} must be in 1..={}",
            data.len()
        )));
    }
    let mut params: Vec<Matrix> = model.params().into_iter().cloned().collect();
    let mut opt = Optimizer::new(*optim, &params)?;
    let mut sampler = BatchSampler::new(data.len(), batch_size, seed);
    let mut history = Vec::with_capacity(epochs);
    let mut current = model.clone();

    for _ in 0..epochs {
        let mut total = 0.0;
        for _ in 0..sampler.batches_per_epoch() {
            let idx = sampler.next_batch();
            let batch = data.select(&idx)?;
            let (value, grads) = loss_and_grad(&current, &batch, loss)?;
            total += value * idx.len() as f64;
            opt.step(&mut params, &grads)?;
            current = current.with_params(params.clone())?;
        }
        history.push(total / data.len() as f64);
    }
    Ok((current, history))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::dataset::Task;
    use crate::nn::mlp::{Activation, Init};

    fn toy() -> Dataset {
        let x = Matrix::from_fn(12, 1, |r, _| r as f64 / 6.0 - 1.0);
        let y = x.map(|v| 0.5 * v - 0.2);
        Dataset::new(x, y, Task::Regression).unwrap()
    }

    #[test]
    fn zero_epochs_is_a_no_op() {
        let m = Mlp::init(&[1, 4, 1], Activation::Tanh, Init::Glorot, 3).unwrap();
        let (out, hist) = train(&m, &toy(), LossKind::Mse, &OptimConfig::adam(0.01), 0, 4, 1).unwrap();
        assert_eq!(out, m);
        assert!(hist.is_empty());
    }

    #[test]
    fn training_is_deterministic_and_reduces_loss() {
        let m = Mlp::init(&[1, 6, 1], Activation::Tanh, Init::Glorot, 3).unwrap();
        let run = || train(&m, &toy(), LossKind::Mse, &OptimConfig::adam(0.05), 50, 5, 9).unwrap();
        let (a, ha) = run();
        let (b, hb) = run();
        assert_eq!(a.flatten(), b.flatten());
        assert_eq!(ha, hb);
        assert!(ha.last().unwrap() < &ha[0]);
    }

    #[test]
    fn sampler_covers_every_row_each_pass() {
        let mut s = BatchSampler::new(10, 4, 0);
        assert_eq!(s.batches_per_epoch(), 3);
        let mut seen: Vec<usize> = (0..3).flat_map(|_| s.next_batch()).collect();
        seen.sort_unstable();
        assert_eq!(seen, (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn rejects_oversized_batch() {
        let m = Mlp::init(&[1, 4, 1], Activation::Tanh, Init::Glorot, 3).unwrap();
        assert!(train(&m, &toy(), LossKind::Mse, &OptimConfig::adam(0.01), 1, 13, 1).is_err());
    }
}
