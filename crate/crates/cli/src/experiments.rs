//! One seeded trial of each experiment family.

use anyhow::{bail, Context, Result};
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use rebasin_core::checkpoint::{self, Checkpoint};
use rebasin_core::continual::{avg_accuracy, forgetting, run_finetune, run_joint, run_stream, StreamReport};
use rebasin_core::data::{gen_poly, make_rotated_stream, sample_plan, ImageSet, PolyKind};
use rebasin_core::lmc::{auc, barrier, cost_curve};
use rebasin_core::nn::{train, Dataset, LossKind, Mlp, Task};
use rebasin_core::rebasin::{apply_plan, l1_distance, optimize_plan, weight_matching, RebasinConfig, TransportPlan};

use crate::config::{ExperimentConfig, Method, Source};

/// Metrics in column order plus named output files.
#[derive(Debug, Default)]
pub struct Trial {
    pub metrics: Vec<(&'static str, f64)>,
    pub files: Vec<(String, Vec<u8>)>,
}

/// Inputs shared by every trial of a run.
pub struct Shared {
    pub images: Option<ImageSet>,
    pub checkpoints: Option<(Mlp, Mlp)>,
}

impl Shared {
    pub fn load(cfg: &ExperimentConfig) -> Result<Self> {
        let images = match (&cfg.data.source, &cfg.data.images, &cfg.data.labels) {
            (Source::Mnist, Some(i), Some(l)) => Some(
                rebasin_core::data::load_idx(i, l)
                    .with_context(|| format!("loading {} / {}", i.display(), l.display()))?,
            ),
            _ => None,
        };
        let checkpoints = match &cfg.checkpoints {
            Some([a, b]) => Some((
                checkpoint::load_model(a).with_context(|| format!("loading {}", a.display()))?,
                checkpoint::load_model(b).with_context(|| format!("loading {}", b.display()))?,
            )),
            None => None,
        };
        Ok(Self { images, checkpoints })
    }
}

struct Split {
    train: Dataset,
    test: Option<Dataset>,
}

impl Split {
    fn eval(&self) -> &Dataset {
        self.test.as_ref().unwrap_or(&self.train)
    }
}

/// Independent sub-seeds drawn from the trial seed.
struct Seeds(ChaCha8Rng);

impl Seeds {
    fn new(trial_seed: u64) -> Self {
        Self(ChaCha8Rng::seed_from_u64(trial_seed))
    }

    fn next(&mut self) -> u64 {
        self.0.random()
    }
}

fn load_split(cfg: &ExperimentConfig, shared: &Shared, seed: u64) -> Result<Option<Split>> {
    let d = &cfg.data;
    let poly = |kind| -> Result<Split> {
        let mut s = Seeds::new(seed);
        let train = gen_poly(kind, d.train_size, d.noise_sd, s.next())?;
        let test = match d.test_size {
            0 => None,
            n => Some(gen_poly(kind, n, d.noise_sd, s.next())?),
        };
        Ok(Split { train, test })
    };
    Ok(match d.source {
        Source::None => None,
        Source::Pol1 => Some(poly(PolyKind::Pol1)?),
        Source::Pol3 => Some(poly(PolyKind::Pol3)?),
        Source::Mnist => {
            let base = shared.images.as_ref().context("mnist images not loaded")?;
            let need = d.train_size + d.test_size;
            if need > base.len() || d.train_size == 0 {
                bail!("{} train + {} test rows requested from {} images", d.train_size, d.test_size, base.len());
            }
            let rows = index::sample(&mut ChaCha8Rng::seed_from_u64(seed), base.len(), need).into_vec();
            let train = base.select(&rows[..d.train_size])?.to_dataset()?;
            let test = match d.test_size {
                0 => None,
                _ => Some(base.select(&rows[d.train_size..])?.to_dataset()?),
            };
            Some(Split { train, test })
        }
    })
}

/// Initializes a model and, when data is given, trains it.
fn fit(cfg: &ExperimentConfig, data: Option<&Dataset>, init_seed: u64, train_seed: u64) -> Result<(Mlp, Vec<f64>)> {
    let model = Mlp::init(&cfg.arch.dims, cfg.arch.activation, cfg.arch.init, init_seed)?;
    let Some(data) = data else {
        return Ok((model, Vec::new()));
    };
    let t = &cfg.train;
    let loss = LossKind::for_task(data.task());
    Ok(train(&model, data, loss, &t.optim, t.epochs, t.batch_size.min(data.len()), train_seed)?)
}

/// Hard plan re-basing `b` onto `a`, and the number of optimizer evaluations.
fn align(cfg: &ExperimentConfig, a: &Mlp, b: &Mlp, data: Option<&Dataset>, seed: u64) -> Result<(TransportPlan, usize)> {
    let method = cfg.method.context("alignment needs a method")?;
    Ok(match method {
        Method::Naive => (TransportPlan::identity(&b.hidden_widths()), 0),
        Method::Wm => (weight_matching(a, b, cfg.wm.max_sweeps, seed)?, 0),
        m => {
            let kind = m.cost().expect("sinkhorn method");
            let rcfg = RebasinConfig { seed, ..cfg.rebasin };
            let out = optimize_plan(a, b, kind, data, &rcfg)?;
            (out.hard, out.history.len())
        }
    })
}

fn plan_file(name: String, plan: &TransportPlan) -> Result<(String, Vec<u8>)> {
    Ok((name, checkpoint::to_json(&Checkpoint::Plan(plan.clone()))?.into_bytes()))
}

pub fn train_trial(cfg: &ExperimentConfig, shared: &Shared, r: usize, seed: u64) -> Result<Trial> {
    let mut s = Seeds::new(seed);
    let split = load_split(cfg, shared, s.next())?.context("training needs data")?;
    let (model, history) = fit(cfg, Some(&split.train), s.next(), s.next())?;
    let eval = split.eval();
    let loss = LossKind::for_task(eval.task());
    let mut metrics = vec![
        ("final_train_loss", history.last().copied().unwrap_or(f64::NAN)),
        ("eval_cost", model.cost(eval, loss)?),
    ];
    if eval.task() == Task::Classification {
        metrics.push(("eval_accuracy", model.accuracy(eval)?));
    }
    let files = vec![(
        format!("model_{r}.json"),
        checkpoint::to_json(&Checkpoint::Mlp((&model).into()))?.into_bytes(),
    )];
    Ok(Trial { metrics, files })
}

/// Recovers a random permutation of one model from the permuted copy.
pub fn find_ot_trial(cfg: &ExperimentConfig, shared: &Shared, r: usize, seed: u64) -> Result<Trial> {
    let mut s = Seeds::new(seed);
    let split = load_split(cfg, shared, s.next())?;
    let data = split.as_ref().map(|d| &d.train);
    let (theta, _) = fit(cfg, data, s.next(), s.next())?;
    let truth = sample_plan(&theta.hidden_widths(), s.next())?;
    let a = apply_plan(&theta, &truth)?;
    let (plan, iters) = align(cfg, &a, &theta, data, s.next())?;
    let l1 = l1_distance(&apply_plan(&theta, &plan)?, &a)?;
    let exact = plan.permutations() == truth.permutations();
    Ok(Trial {
        metrics: vec![
            ("l1", l1),
            ("l1_x1e3", l1 * 1e3),
            ("exact", f64::from(u8::from(exact))),
            ("iterations", iters as f64),
        ],
        files: vec![plan_file(format!("plan_{r}.json"), &plan)?],
    })
}

pub fn lmc_trial(cfg: &ExperimentConfig, shared: &Shared, r: usize, seed: u64) -> Result<Trial> {
    let mut s = Seeds::new(seed);
    let split = load_split(cfg, shared, s.next())?;
    let (a, b) = match &shared.checkpoints {
        Some((a, b)) => (a.clone(), b.clone()),
        None => {
            let data = split.as_ref().map(|d| &d.train);
            (fit(cfg, data, s.next(), s.next())?.0, fit(cfg, data, s.next(), s.next())?.0)
        }
    };
    let split = split.context("lmc needs data to evaluate the path")?;
    let (plan, iters) = align(cfg, &a, &b, Some(&split.train), s.next())?;
    let b_aligned = apply_plan(&b, &plan)?;
    let eval = split.eval();
    let curve = cost_curve(&a, &b_aligned, eval, LossKind::for_task(eval.task()), cfg.lmc.grid_points)?;
    let mid = curve.lambdas().iter().map(|l| (l - 0.5).abs()).enumerate().min_by(|x, y| x.1.total_cmp(&y.1)).unwrap().0;
    let mut metrics = vec![
        ("barrier", barrier(&curve)),
        ("auc", auc(&curve)),
        ("cost_a", curve.cost_a()),
        ("cost_b", curve.cost_b()),
        ("mid_cost", curve.costs()[mid]),
        ("iterations", iters as f64),
    ];
    if let Some(acc) = curve.accuracies() {
        metrics.push(("acc_a", acc[0]));
        metrics.push(("acc_b", acc[acc.len() - 1]));
        metrics.push(("mid_accuracy", acc[mid]));
    }
    let mut csv = Vec::new();
    curve.write_csv(&mut csv)?;
    let mut files = vec![(format!("curve_{r}.csv"), csv)];
    if cfg.method != Some(Method::Naive) {
        files.push(plan_file(format!("plan_{r}.json"), &plan)?);
    }
    Ok(Trial { metrics, files })
}

pub fn continual_trial(cfg: &ExperimentConfig, shared: &Shared, r: usize, seed: u64) -> Result<Trial> {
    let c = &cfg.continual;
    let base = shared.images.as_ref().context("mnist images not loaded")?;
    let mut s = Seeds::new(seed);
    let stream = make_rotated_stream(base, c.episodes, c.train_per_episode, c.test_per_episode, s.next())?;
    let (theta0, _) = fit(cfg, Some(&stream[0].train), s.next(), s.next())?;
    let method_seed = s.next();
    let report: StreamReport = match cfg.method {
        Some(Method::RebasinReplay) => run_stream(&theta0, &stream, &{
            let mut rc = c.rebasin;
            rc.seed = method_seed;
            rc
        })?,
        Some(Method::Finetune) => run_finetune(&theta0, &stream, &{
            let mut bc = c.baseline;
            bc.seed = method_seed;
            bc
        })?,
        Some(Method::Joint) => run_joint(&theta0, &stream, &{
            let mut bc = c.baseline;
            bc.seed = method_seed;
            bc
        })?,
        m => bail!("method {m:?} is not a continual method"),
    };
    let e = report.episodes();
    let f = if e >= 2 { forgetting(&report, e)? } else { 0.0 };
    let metrics = vec![
        ("avg_accuracy", avg_accuracy(&report, e)?),
        ("forgetting", f),
        ("first_episode_accuracy", report.acc[e - 1][0]),
        ("last_episode_accuracy", report.acc[e - 1][e - 1]),
    ];
    let stream_json = json!({ "report": report, "stream": c });
    let mut csv = Vec::new();
    report.write_summary_csv(&mut csv)?;
    Ok(Trial {
        metrics,
        files: vec![
            (format!("stream_{r}.json"), serde_json::to_vec_pretty(&stream_json)?),
            (format!("stream_{r}.csv"), csv),
        ],
    })
}
