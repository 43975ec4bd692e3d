//! Experiment configuration: a JSON document, dotted-key overrides, and the
//! defaults that depend on the dataset/method pair.

use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use rebasin_core::continual::{BaselineConfig, ContinualConfig};
use rebasin_core::nn::{Activation, Init, OptimConfig};
use rebasin_core::rebasin::{CostKind, RebasinConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Experiment {
    Train,
    FindOt,
    Lmc,
    Continual,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    SinkhornL2,
    SinkhornMid,
    SinkhornRnd,
    Wm,
    Naive,
    RebasinReplay,
    Finetune,
    Joint,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::SinkhornL2 => "sinkhorn_l2",
            Method::SinkhornMid => "sinkhorn_mid",
            Method::SinkhornRnd => "sinkhorn_rnd",
            Method::Wm => "wm",
            Method::Naive => "naive",
            Method::RebasinReplay => "rebasin_replay",
            Method::Finetune => "finetune",
            Method::Joint => "joint",
        }
    }

    pub fn cost(self) -> Option<CostKind> {
        match self {
            Method::SinkhornL2 => Some(CostKind::L2),
            Method::SinkhornMid => Some(CostKind::Mid),
            Method::SinkhornRnd => Some(CostKind::Rnd),
            _ => None,
        }
    }

    fn is_alignment(self) -> bool {
        matches!(
            self,
            Method::SinkhornL2 | Method::SinkhornMid | Method::SinkhornRnd | Method::Wm | Method::Naive
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    /// No data: models keep their random initialization.
    None,
    Pol1,
    Pol3,
    Mnist,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArchConfig {
    pub dims: Vec<usize>,
    pub activation: Activation,
    pub init: Init,
}

impl Default for ArchConfig {
    fn default() -> Self {
        Self {
            dims: vec![1, 10, 10, 1],
            activation: Activation::Tanh,
            init: Init::StandardNormal,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub source: Source,
    pub train_size: usize,
    /// Held-out rows; 0 evaluates on the training rows.
    pub test_size: usize,
    pub noise_sd: f64,
    pub images: Option<PathBuf>,
    pub labels: Option<PathBuf>,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            source: Source::None,
            train_size: 100,
            test_size: 100,
            noise_sd: 0.05,
            images: None,
            labels: None,
        }
    }
}

/// How base models are fitted before any alignment or stream.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub optim: OptimConfig,
    pub epochs: usize,
    pub batch_size: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            optim: OptimConfig::adam(0.01),
            epochs: 500,
            batch_size: 100,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WmConfig {
    pub max_sweeps: usize,
}

impl Default for WmConfig {
    fn default() -> Self {
        Self { max_sweeps: 100 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LmcConfig {
    pub grid_points: usize,
}

impl Default for LmcConfig {
    fn default() -> Self {
        Self {
            grid_points: rebasin_core::lmc::DEFAULT_GRID_POINTS,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StreamConfig {
    pub episodes: usize,
    pub train_per_episode: usize,
    pub test_per_episode: usize,
    pub rebasin: ContinualConfig,
    pub baseline: BaselineConfig,
}

impl Default for StreamConfig {
    fn default() -> Self {
        Self {
            episodes: 5,
            train_per_episode: 2000,
            test_per_episode: 500,
            rebasin: ContinualConfig::default(),
            baseline: BaselineConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    #[serde(default)]
    pub method: Option<Method>,
    #[serde(default = "one")]
    pub runs: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub arch: ArchConfig,
    #[serde(default)]
    pub data: DataConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub rebasin: RebasinConfig,
    #[serde(default)]
    pub wm: WmConfig,
    #[serde(default)]
    pub lmc: LmcConfig,
    #[serde(default)]
    pub continual: StreamConfig,
    /// Pre-trained endpoint models for `lmc`, used by every trial instead
    /// of training a fresh pair.
    #[serde(default)]
    pub checkpoints: Option<[PathBuf; 2]>,
}

fn one() -> usize {
    1
}

impl ExperimentConfig {
    /// Parses a config document, applies `key=value` overrides and fills
    /// the dataset/method dependent defaults that were left unset.
    pub fn resolve(mut doc: Value, overrides: &[String]) -> Result<Self> {
        for o in overrides {
            let (key, raw) = o.split_once('=').with_context(|| format!("override `{o}` is not key=value"))?;
            set_path(&mut doc, key, parse_scalar(raw))?;
        }
        let cfg: ExperimentConfig = serde_json::from_value(doc.clone()).context("invalid configuration")?;

        if doc.pointer("/rebasin/optim/learning_rate").is_none() {
            if let Some(lr) = cfg.method.and_then(|m| default_rebasin_lr(cfg.data.source, m)) {
                set_path(&mut doc, "rebasin.optim.learning_rate", lr.into())?;
            }
        }
        if doc.pointer("/rebasin/optim/max_iters").is_none() && cfg.experiment == Experiment::Lmc {
            set_path(&mut doc, "rebasin.optim.max_iters", 1000.into())?;
        }
        let cfg: ExperimentConfig = serde_json::from_value(doc)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let doc: Value = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        Self::resolve(doc, overrides)
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(self.runs >= 1, "runs must be ≥ 1");
        ensure!(self.arch.dims.len() >= 2, "architecture needs at least input and output widths");
        ensure!(!self.arch.dims.contains(&0), "layer widths must be positive");
        match (self.experiment, self.method) {
            (Experiment::Train, None) => {}
            (Experiment::Train, Some(m)) => bail!("train takes no method, got {}", m.name()),
            (Experiment::FindOt | Experiment::Lmc, Some(m)) if m.is_alignment() => {}
            (Experiment::Continual, Some(m)) if !m.is_alignment() => {}
            (e, Some(m)) => bail!("method {} is not valid for {e:?}", m.name()),
            (e, None) => bail!("{e:?} needs a method"),
        }
        let needs_data = matches!(self.experiment, Experiment::Train | Experiment::Lmc | Experiment::Continual)
            || self.method.and_then(Method::cost).is_some_and(|c| c.needs_data());
        if needs_data && self.data.source == Source::None && self.checkpoints.is_none() {
            bail!("{:?} with this method needs a data source", self.experiment);
        }
        if self.experiment == Experiment::Continual && self.data.source != Source::Mnist {
            bail!("continual streams are built from mnist images");
        }
        if self.data.source == Source::Mnist && (self.data.images.is_none() || self.data.labels.is_none()) {
            bail!("mnist needs data.images and data.labels paths");
        }
        if self.checkpoints.is_some() && self.experiment != Experiment::Lmc {
            bail!("checkpoints are only read by lmc");
        }
        Ok(())
    }
}

/// Re-basin learning rates by dataset and cost; the OT-recovery setting
/// (random init) shares the polynomial rates.
fn default_rebasin_lr(source: Source, method: Method) -> Option<f64> {
    let cost = method.cost()?;
    Some(match (source, cost) {
        (Source::Mnist, CostKind::L2) => 0.01,
        (Source::Mnist, _) => 0.1,
        (_, CostKind::Rnd) => 0.01,
        _ => 0.1,
    })
}

/// JSON if it parses, otherwise a bare string.
fn parse_scalar(raw: &str) -> Value {
    serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_owned()))
}

fn set_path(doc: &mut Value, key: &str, value: Value) -> Result<()> {
    let mut node = doc;
    let parts: Vec<&str> = key.split('.').collect();
    ensure!(parts.iter().all(|p| !p.is_empty()), "malformed key `{key}`");
    for (i, part) in parts.iter().enumerate() {
        if node.is_null() {
            *node = Value::Object(Default::default());
        }
        let obj = node
            .as_object_mut()
            .with_context(|| format!("`{}` is not an object", parts[..i].join(".")))?;
        if i + 1 == parts.len() {
            obj.insert((*part).to_owned(), value);
            return Ok(());
        }
        node = obj.entry(*part).or_insert(Value::Null);
    }
    unreachable!()
}
