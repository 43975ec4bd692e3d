use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::cost::{c_l2, c_mid, cost_and_grad, CostKind};
use super::plan::TransportPlan;
use crate::error::{Error, Result};
use crate::nn::{BatchSampler, Dataset, EarlyStopping, LossKind, Matrix, Mlp, OptimConfig, Optimizer};
use crate::sinkhorn::SinkhornConfig;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RebasinConfig {
    pub sinkhorn: SinkhornConfig,
    pub optim: OptimConfig,
    pub batch_size: usize,
    /// Rows of the fixed batch used to score rounded plans for data costs.
    pub monitor_size: usize,
    pub seed: u64,
}

impl Default for RebasinConfig {
    fn default() -> Self {
        Self {
            sinkhorn: SinkhornConfig::default(),
            optim: OptimConfig::adam(0.1),
            batch_size: 100,
            monitor_size: 1000,
            seed: 0,
        }
    }
}

impl RebasinConfig {
    pub fn validate(&self) -> Result<()> {
        self.sinkhorn.validate()?;
        self.optim.validate()?;
        if self.batch_size == 0 || self.monitor_size == 0 {
            return Err(Error::Config("batch and monitor sizes must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iter: usize,
    /// Cost of the rounded plan: `c_l2`, or `c_mid` on the monitor batch.
    pub hard_cost: f64,
    /// Optimized objective before this iteration's step; absent on the final evaluation.
    pub soft_cost: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct RebasinOutcome {
    /// Final soft parameters.
    pub soft: TransportPlan,
    /// Best rounded plan seen during optimization.
    pub hard: TransportPlan,
    pub hard_cost: f64,
    pub history: Vec<IterationRecord>,
}

/// Learns a plan re-basing `b` onto `a` by gradient descent on soft
/// Sinkhorn parameters initialized at the identity.
///
/// Every iteration rounds the current plan and scores it; the best rounded
/// plan is returned. Optimization stops when the rounded `c_l2` reaches
/// exactly zero, when the smooth objective stalls per the early-stop rule, or
/// after `optim.max_iters` steps.
pub fn optimize_plan(
    a: &Mlp,
    b: &Mlp,
    kind: CostKind,
    data: Option<&Dataset>,
    cfg: &RebasinConfig,
) -> Result<RebasinOutcome> {
    cfg.validate()?;
    a.same_architecture(b)?;
    if kind.needs_data() && data.is_none() {
        return Err(Error::Config(format!("{kind:?} cost needs a dataset")));
    }
    let data = if kind.needs_data() { data } else { None };
    if let Some(d) = data {
        a.check_data(d)?;
    }
    let loss = data.map(|d| LossKind::for_task(d.task()));

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let monitor = data.map(|d| monitor_batch(d, cfg.monitor_size, &mut rng)).transpose()?;
    let mut sampler = data.map(|d| BatchSampler::new(d.len(), cfg.batch_size.min(d.len()), rng.random()));

    let widths = b.hidden_widths();
    let mut params: Vec<Matrix> = widths.iter().map(|&w| Matrix::identity(w)).collect();
    let mut opt = Optimizer::new(cfg.optim, &params)?;
    let mut stopper = EarlyStopping::new(cfg.optim.early_stop);
    let mut history = Vec::new();
    let mut best: Option<(f64, TransportPlan)> = None;

    for iter in 0..=cfg.optim.max_iters {
        let soft = TransportPlan::soft_params(params.clone(), cfg.sinkhorn)?;
        let hard = soft.rounded()?;
        let hard_cost = match (&monitor, loss) {
            (Some(m), Some(l)) => c_mid(&hard, a, b, m, l)?,
            _ => c_l2(&hard, a, b)?,
        };
        if best.as_ref().is_none_or(|(c, _)| hard_cost < *c) {
            best = Some((hard_cost, hard));
        }
        let exact = kind == CostKind::L2 && hard_cost == 0.0;
        if exact || iter == cfg.optim.max_iters {
            history.push(IterationRecord {
                iter,
                hard_cost,
                soft_cost: None,
            });
            break;
        }

        let batch = match (data, sampler.as_mut()) {
            (Some(d), Some(s)) => Some(d.select(&s.next_batch())?),
            _ => None,
        };
        let lambda = if kind == CostKind::Rnd { rng.random::<f64>() } else { 0.5 };
        let (soft_cost, grads) = cost_and_grad(&soft, kind, a, b, batch.as_ref(), lambda)?;
        history.push(IterationRecord {
            iter,
            hard_cost,
            soft_cost: Some(soft_cost),
        });
        let signal = match (&monitor, loss) {
            (Some(m), Some(l)) => c_mid(&soft, a, b, m, l)?,
            _ => soft_cost,
        };
        stopper.observe(signal);
        if stopper.should_stop() {
            break;
        }
        opt.step(&mut params, &grads)?;
    }

    let (hard_cost, hard) = best.expect("at least one evaluation");
    Ok(RebasinOutcome {
        soft: TransportPlan::soft_params(params, cfg.sinkhorn)?,
        hard,
        hard_cost,
        history,
    })
}

fn monitor_batch(data: &Dataset, size: usize, rng: &mut ChaCha8Rng) -> Result<Dataset> {
    if data.len() <= size {
        return Ok(data.clone());
    }
    let mut idx: Vec<usize> = (0..data.len()).collect();
    idx.shuffle(rng);
    idx.truncate(size);
    idx.sort_unstable();
    data.select(&idx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Activation, Init};
    use crate::rebasin::{apply_plan, l1_distance};

    #[test]
    fn already_aligned_stops_immediately() {
        let a = Mlp::init(&[1, 10, 10, 1], Activation::Tanh, Init::StandardNormal, 4).unwrap();
        let out = optimize_plan(&a, &a, CostKind::L2, None, &RebasinConfig::default()).unwrap();
        assert_eq!(out.history.len(), 1);
        assert_eq!(out.hard, TransportPlan::identity(&[10, 10]));
        assert_eq!(out.hard_cost, 0.0);
    }

    #[test]
    fn recovers_a_random_permutation() {
        let b = Mlp::init(&[1, 10, 10, 1], Activation::Tanh, Init::StandardNormal, 5).unwrap();
        let p = TransportPlan::from_permutations(&[
            vec![3, 7, 1, 0, 9, 2, 8, 4, 6, 5],
            vec![9, 8, 7, 6, 5, 4, 3, 2, 1, 0],
        ])
        .unwrap();
        let a = apply_plan(&b, &p).unwrap();
        let out = optimize_plan(&a, &b, CostKind::L2, None, &RebasinConfig::default()).unwrap();
        assert_eq!(out.hard, p);
        assert_eq!(l1_distance(&apply_plan(&b, &out.hard).unwrap(), &a).unwrap(), 0.0);
    }

    #[test]
    fn data_costs_require_data_and_are_deterministic() {
        let a = Mlp::init(&[1, 4, 1], Activation::Tanh, Init::Glorot, 1).unwrap();
        let b = Mlp::init(&[1, 4, 1], Activation::Tanh, Init::Glorot, 2).unwrap();
        let cfg = RebasinConfig {
            batch_size: 8,
            ..RebasinConfig::default()
        };
        assert!(matches!(
            optimize_plan(&a, &b, CostKind::Rnd, None, &cfg),
            Err(Error::Config(_))
        ));
        let x = Matrix::from_fn(20, 1, |r, _| r as f64 / 10.0 - 1.0);
        let d = Dataset::new(x.clone(), x.map(|v| v * v), crate::nn::Task::Regression).unwrap();
        let run = || optimize_plan(&a, &b, CostKind::Rnd, Some(&d), &cfg).unwrap();
        let (r1, r2) = (run(), run());
        assert_eq!(r1.hard, r2.hard);
        assert_eq!(r1.history, r2.history);
        assert!(r1.history.len() >= 2);
    }
}
