//! Re-basin incremental learning: each episode jointly learns a plan and a
//! residual `δ`, then fuses `θ ← (1−α)θ + α·π(θ) + δ`. Includes a replay
//! buffer, the finetune and joint-training baselines, and stream metrics.

use std::io::Write;
use std::rc::Rc;
use std::time::Instant;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::subsample_per_class;
use crate::error::{dim_err, Error, Result};
use crate::nn::mlp::{forward_on_tape, loss_on_tape};
use crate::nn::{train, BatchSampler, Dataset, LossKind, Matrix, Mlp, OptimConfig, Optimizer, Tape};
use crate::rebasin::{apply_plan, interpolate, rebase_on_tape, PlanMode, TransportPlan};
use crate::sinkhorn::SinkhornConfig;

/// Upper end of the uniform draw that initializes `δ`.
pub const DELTA_INIT_SCALE: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct Episode {
    pub id: usize,
    pub train: Dataset,
    pub test: Dataset,
}

impl Episode {
    pub fn new(id: usize, train: Dataset, test: Dataset) -> Result<Self> {
        if train.task() != test.task()
            || train.input_dim() != test.input_dim()
            || train.output_dim() != test.output_dim()
        {
            return Err(dim_err!("episode {id}: train and test sets differ in shape or task"));
        }
        Ok(Self { id, train, test })
    }
}

/// Up to `k` examples per class from every closed episode.
#[derive(Clone, Debug, Default)]
pub struct ReplayBuffer {
    per_class: usize,
    parts: Vec<Dataset>,
}

impl ReplayBuffer {
    pub fn new(per_class: usize) -> Self {
        Self {
            per_class,
            parts: Vec::new(),
        }
    }

    /// Stores a per-class sample of `data`; earlier contents are untouched.
    pub fn close_episode(&mut self, data: &Dataset, seed: u64) -> Result<()> {
        if self.per_class > 0 {
            self.parts.push(subsample_per_class(data, self.per_class, seed)?);
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.parts.iter().map(Dataset::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn episodes(&self) -> usize {
        self.parts.len()
    }

    /// Everything stored, oldest first.
    pub fn contents(&self) -> Result<Option<Dataset>> {
        if self.parts.is_empty() {
            return Ok(None);
        }
        let refs: Vec<&Dataset> = self.parts.iter().collect();
        Dataset::concat(&refs).map(Some)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ContinualConfig {
    /// Fusion balance between the current model and its re-basing.
    pub alpha: f64,
    /// Weight decay applied to `δ`.
    pub delta_weight_decay: f64,
    /// Adam learning rate for the plan.
    pub plan_lr: f64,
    /// Gradient-descent learning rate for `δ`.
    pub delta_lr: f64,
    pub epochs_per_episode: usize,
    pub batch_size: usize,
    pub replay_per_class: usize,
    pub sinkhorn: SinkhornConfig,
    pub seed: u64,
}

impl Default for ContinualConfig {
    fn default() -> Self {
        Self {
            alpha: 0.8,
            delta_weight_decay: 0.1,
            plan_lr: 0.1,
            delta_lr: 0.05,
            epochs_per_episode: 5,
            batch_size: 500,
            replay_per_class: 5,
            sinkhorn: SinkhornConfig::default(),
            seed: 0,
        }
    }
}

impl ContinualConfig {
    pub fn validate(&self) -> Result<()> {
        self.sinkhorn.validate()?;
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::Config(format!("alpha {} outside [0, 1]", self.alpha)));
        }
        if !(self.plan_lr > 0.0 && self.delta_lr > 0.0) {
            return Err(Error::Config("learning rates must be positive".into()));
        }
        if self.delta_weight_decay < 0.0 {
            return Err(Error::Config("delta weight decay must be nonnegative".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        Ok(())
    }
}

/// Model shifted by a flat residual, in [`Mlp::flatten`] order.
fn shifted(model: &Mlp, delta: &[f64]) -> Result<Mlp> {
    let flat: Vec<f64> = model.flatten().iter().zip(delta).map(|(p, d)| p + d).collect();
    model.unflatten(&flat)
}

fn check_delta(theta: &Mlp, delta: &[f64]) -> Result<()> {
    if delta.len() != theta.param_count() {
        return Err(dim_err!(
            "δ has {} entries, model has {} parameters",
            delta.len(),
            theta.param_count()
        ));
    }
    Ok(())
}

/// Task cost of `(θ + π(θ))/2 + δ` on `batch`. The `δ` penalty is applied
/// as weight decay during optimization and is not part of this value.
pub fn c_cl(delta: &[f64], plan: &TransportPlan, theta: &Mlp, batch: &Dataset, loss: LossKind) -> Result<f64> {
    check_delta(theta, delta)?;
    let mid = interpolate(theta, &apply_plan(theta, plan)?, 0.5)?;
    shifted(&mid, delta)?.cost(batch, loss)
}

/// [`c_cl`] with gradients for each soft plan matrix and for `δ` (flat).
pub fn c_cl_and_grad(
    delta: &[f64],
    plan: &TransportPlan,
    theta: &Mlp,
    batch: &Dataset,
) -> Result<(f64, Vec<Matrix>, Vec<f64>)> {
    c_cl_mean_and_grad(delta, plan, theta, &[batch])
}

/// Mean of [`c_cl`] over several batches, with gradients. The re-based
/// model is built once and shared by every batch.
pub fn c_cl_mean_and_grad(
    delta: &[f64],
    plan: &TransportPlan,
    theta: &Mlp,
    batches: &[&Dataset],
) -> Result<(f64, Vec<Matrix>, Vec<f64>)> {
    if plan.mode() != PlanMode::SoftParams {
        return Err(Error::InvalidInput("gradients need a soft-parameter plan".into()));
    }
    if batches.is_empty() {
        return Err(Error::InvalidInput("no batches".into()));
    }
    check_delta(theta, delta)?;
    let tape = Tape::new();
    let xs: Vec<_> = plan.mats().iter().map(|m| tape.leaf(m.clone())).collect();
    let shapes = theta.unflatten(delta)?;
    let ds: Vec<_> = shapes.params().into_iter().map(|m| tape.leaf(m.clone())).collect();
    let rebased = rebase_on_tape(&tape, &xs, theta, plan.sinkhorn_config())?;
    let layers = theta
        .layers()
        .iter()
        .zip(&rebased)
        .zip(ds.chunks(2))
        .map(|((l, &(w, b)), d)| {
            let w = tape.constant(l.weight.scale(0.5)).add(w.scale(0.5))?.add(d[0])?;
            let b = tape.constant(l.bias.scale(0.5)).add(b.scale(0.5))?.add(d[1])?;
            Ok((w, b))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut total = None;
    for batch in batches {
        theta.check_data(batch)?;
        let loss = LossKind::for_task(batch.task());
        let out = forward_on_tape(&layers, theta.activation(), tape.constant(batch.inputs().clone()))?;
        let cost = loss_on_tape(out, Rc::new(batch.targets().clone()), loss)?;
        total = Some(match total {
            None => cost,
            Some(t) => cost.add(t)?,
        });
    }
    let cost = total.expect("nonempty").scale(1.0 / batches.len() as f64);
    let leaves: Vec<_> = xs.iter().chain(&ds).copied().collect();
    let mut grads = tape.gradients(cost, &leaves)?;
    let dgrads = grads.split_off(xs.len());
    let flat = dgrads.iter().flat_map(|m| m.as_slice().iter().copied()).collect();
    Ok((cost.item(), grads, flat))
}

#[derive(Clone, Debug)]
pub struct EpisodeOutcome {
    /// Soft plan parameters after learning.
    pub plan: TransportPlan,
    pub delta: Vec<f64>,
    /// Objective (mean of current and replay costs) before each step.
    pub history: Vec<f64>,
}

/// Jointly optimizes a soft plan (Adam) and `δ` (gradient descent with
/// weight decay) on `θ`'s self-re-basing. Each step averages the cost on a
/// current-episode batch with the cost on a replay batch when the buffer is
/// nonempty.
pub fn learn_episode(theta: &Mlp, episode: &Episode, replay: &ReplayBuffer, cfg: &ContinualConfig) -> Result<EpisodeOutcome> {
    cfg.validate()?;
    theta.check_data(&episode.train)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut delta: Vec<f64> = (0..theta.param_count())
        .map(|_| rng.random_range(0.0..DELTA_INIT_SCALE))
        .collect();
    let widths = theta.hidden_widths();
    let mut xs: Vec<Matrix> = widths.iter().map(|&w| Matrix::identity(w)).collect();
    let mut plan_opt = Optimizer::new(OptimConfig::adam(cfg.plan_lr), &xs)?;
    let mut delta_param = vec![Matrix::column(delta.clone())?];
    let mut delta_opt = Optimizer::new(OptimConfig::sgd(cfg.delta_lr, cfg.delta_weight_decay), &delta_param)?;

    let train = &episode.train;
    let batch_size = cfg.batch_size.min(train.len());
    let mut sampler = BatchSampler::new(train.len(), batch_size, rng.random());
    let memory = replay.contents()?;
    let mut history = Vec::new();

    for _ in 0..cfg.epochs_per_episode * sampler.batches_per_epoch() {
        let plan = TransportPlan::soft_params(xs.clone(), cfg.sinkhorn)?;
        let batch = train.select(&sampler.next_batch())?;
        let replayed = match &memory {
            Some(mem) => {
                let take = batch_size.min(mem.len());
                Some(mem.select(&index::sample(&mut rng, mem.len(), take).into_vec())?)
            }
            None => None,
        };
        let batches: Vec<&Dataset> = std::iter::once(&batch).chain(replayed.as_ref()).collect();
        let (cost, gx, gd) = c_cl_mean_and_grad(&delta, &plan, theta, &batches)?;
        history.push(cost);
        plan_opt.step(&mut xs, &gx)?;
        delta_opt.step(&mut delta_param, &[Matrix::column(gd)?])?;
        delta.copy_from_slice(delta_param[0].as_slice());
    }
    Ok(EpisodeOutcome {
        plan: TransportPlan::soft_params(xs, cfg.sinkhorn)?,
        delta,
        history,
    })
}

/// `(1−α)θ + α·π(θ) + δ`.
pub fn fuse(theta: &Mlp, plan: &TransportPlan, delta: &[f64], alpha: f64) -> Result<Mlp> {
    if plan.mode() != PlanMode::Hard {
        return Err(Error::InvalidInput("fusion needs a hard plan".into()));
    }
    check_delta(theta, delta)?;
    let rebased = apply_plan(theta, plan)?.flatten();
    let flat: Vec<f64> = theta
        .flatten()
        .iter()
        .zip(&rebased)
        .zip(delta)
        .map(|((t, p), d)| (1.0 - alpha) * t + alpha * p + d)
        .collect();
    theta.unflatten(&flat)
}

/// `acc[k][j]`: accuracy after episode `k` on the test set of episode `j ≤ k`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StreamReport {
    pub method: String,
    pub seed: u64,
    pub acc: Vec<Vec<f64>>,
    /// Wall-clock seconds per episode; excluded from serialization so reports
    /// stay byte-reproducible.
    #[serde(skip)]
    pub seconds: Vec<f64>,
}

impl StreamReport {
    pub fn new(method: impl Into<String>, seed: u64, acc: Vec<Vec<f64>>) -> Result<Self> {
        for (k, row) in acc.iter().enumerate() {
            if row.len() != k + 1 {
                return Err(Error::InvalidInput(format!("row {k} has {} entries, expected {}", row.len(), k + 1)));
            }
            if row.iter().any(|a| !(0.0..=1.0).contains(a)) {
                return Err(Error::InvalidInput(format!("row {k} has accuracies outside [0, 1]")));
            }
        }
        Ok(Self {
            method: method.into(),
            seed,
            acc,
            seconds: Vec::new(),
        })
    }

    pub fn episodes(&self) -> usize {
        self.acc.len()
    }

    /// Columns `episode,avg_accuracy,forgetting`; forgetting is blank for the first episode.
    pub fn write_summary_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["episode", "avg_accuracy", "forgetting"]).map_err(std::io::Error::other)?;
        for e in 1..=self.episodes() {
            let f = if e >= 2 { forgetting(self, e)?.to_string() } else { String::new() };
            w.write_record([e.to_string(), avg_accuracy(self, e)?.to_string(), f])
                .map_err(std::io::Error::other)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Mean of row `E` (1-based) of the accuracy matrix.
pub fn avg_accuracy(report: &StreamReport, e: usize) -> Result<f64> {
    if e == 0 || e > report.episodes() {
        return Err(Error::InvalidInput(format!("episode {e} outside 1..={}", report.episodes())));
    }
    let row = &report.acc[e - 1];
    Ok(row.iter().sum::<f64>() / row.len() as f64)
}

/// Mean over tasks `j < E` of `max_{k ∈ [j, E−1]} acc[k][j] − acc[E][j]` (1-based).
pub fn forgetting(report: &StreamReport, e: usize) -> Result<f64> {
    if e < 2 || e > report.episodes() {
        return Err(Error::InvalidInput(format!("forgetting needs 2 ≤ E ≤ {}, got {e}", report.episodes())));
    }
    let last = &report.acc[e - 1];
    let total: f64 = (0..e - 1)
        .map(|j| {
            let best = (j..e - 1).map(|k| report.acc[k][j]).fold(f64::NEG_INFINITY, f64::max);
            best - last[j]
        })
        .sum();
    Ok(total / (e - 1) as f64)
}

fn evaluate(model: &Mlp, episodes: &[Episode]) -> Result<Vec<f64>> {
    episodes.iter().map(|ep| model.accuracy(&ep.test)).collect()
}

fn check_stream(episodes: &[Episode]) -> Result<()> {
    if episodes.is_empty() {
        return Err(Error::InvalidInput("empty episode stream".into()));
    }
    Ok(())
}

/// Re-basin learning over `episodes[1..]`, starting from `θ_0` trained on
/// `episodes[0]`. Row 0 of the report evaluates `θ_0` itself.
pub fn run_stream(theta0: &Mlp, episodes: &[Episode], cfg: &ContinualConfig) -> Result<StreamReport> {
    check_stream(episodes)?;
    cfg.validate()?;
    let mut replay = ReplayBuffer::new(cfg.replay_per_class);
    let mut theta = theta0.clone();
    let start = Instant::now();
    let mut acc = vec![evaluate(&theta, &episodes[..1])?];
    let mut seconds = vec![start.elapsed().as_secs_f64()];
    replay.close_episode(&episodes[0].train, cfg.seed)?;

    for (e, episode) in episodes.iter().enumerate().skip(1) {
        let start = Instant::now();
        let ep_cfg = ContinualConfig {
            seed: cfg.seed.wrapping_add(e as u64),
            ..*cfg
        };
        let out = learn_episode(&theta, episode, &replay, &ep_cfg)?;
        theta = fuse(&theta, &out.plan.rounded()?, &out.delta, cfg.alpha)?;
        replay.close_episode(&episode.train, ep_cfg.seed)?;
        acc.push(evaluate(&theta, &episodes[..=e])?);
        seconds.push(start.elapsed().as_secs_f64());
    }
    let mut report = StreamReport::new("rebasin_replay", cfg.seed, acc)?;
    report.seconds = seconds;
    Ok(report)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BaselineConfig {
    pub optim: OptimConfig,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self {
            optim: OptimConfig::adam(1e-3),
            epochs: 5,
            batch_size: 500,
            seed: 0,
        }
    }
}

/// Plain sequential training on every episode in turn, no replay.
pub fn run_finetune(theta0: &Mlp, episodes: &[Episode], cfg: &BaselineConfig) -> Result<StreamReport> {
    check_stream(episodes)?;
    let mut theta = theta0.clone();
    let mut acc = Vec::new();
    let mut seconds = Vec::new();
    for (e, episode) in episodes.iter().enumerate() {
        let start = Instant::now();
        let data = &episode.train;
        let loss = LossKind::for_task(data.task());
        let seed = cfg.seed.wrapping_add(e as u64);
        theta = train(&theta, data, loss, &cfg.optim, cfg.epochs, cfg.batch_size.min(data.len()), seed)?.0;
        acc.push(evaluate(&theta, &episodes[..=e])?);
        seconds.push(start.elapsed().as_secs_f64());
    }
    let mut report = StreamReport::new("finetune", cfg.seed, acc)?;
    report.seconds = seconds;
    Ok(report)
}

/// One training run on the union of all train sets; every row of the
/// report evaluates that single model.
pub fn run_joint(theta0: &Mlp, episodes: &[Episode], cfg: &BaselineConfig) -> Result<StreamReport> {
    check_stream(episodes)?;
    let start = Instant::now();
    let parts: Vec<&Dataset> = episodes.iter().map(|e| &e.train).collect();
    let union = Dataset::concat(&parts)?;
    let loss = LossKind::for_task(union.task());
    let theta = train(theta0, &union, loss, &cfg.optim, cfg.epochs, cfg.batch_size.min(union.len()), cfg.seed)?.0;
    let all = evaluate(&theta, episodes)?;
    let acc = (1..=episodes.len()).map(|k| all[..k].to_vec()).collect();
    let mut report = StreamReport::new("joint", cfg.seed, acc)?;
    report.seconds = vec![start.elapsed().as_secs_f64()];
    Ok(report)
}
