use serde::{Deserialize, Serialize};

use super::matrix::Matrix;
use crate::error::{dim_err, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimKind {
    Adam,
    Sgd,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EarlyStop {
    pub patience: usize,
    pub min_improvement: f64,
}

impl Default for EarlyStop {
    fn default() -> Self {
        Self {
            patience: 10,
            min_improvement: 1e-10,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimConfig {
    pub kind: OptimKind,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// L2 penalty folded into the gradient: `g + weight_decay * p`.
    pub weight_decay: f64,
    pub max_iters: usize,
    pub early_stop: EarlyStop,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            kind: OptimKind::Adam,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay: 0.0,
            max_iters: 100,
            early_stop: EarlyStop::default(),
        }
    }
}

impl OptimConfig {
    pub fn adam(learning_rate: f64) -> Self {
        Self {
            learning_rate,
            ..Self::default()
        }
    }

    pub fn sgd(learning_rate: f64, weight_decay: f64) -> Self {
        Self {
            kind: OptimKind::Sgd,
            learning_rate,
            weight_decay,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.weight_decay < 0.0 {
            return Err(Error::Config("weight decay must be nonnegative".into()));
        }
        if self.early_stop.patience == 0 {
            return Err(Error::Config("early-stop patience must be at least 1".into()));
        }
        Ok(())
    }
}

/// First-order optimizer state over a fixed list of parameter matrices.
pub struct Optimizer {
    cfg: OptimConfig,
    t: i32,
    m: Vec<Matrix>,
    v: Vec<Matrix>,
}

impl Optimizer {
    pub fn new(cfg: OptimConfig, params: &[Matrix]) -> Result<Self> {
        cfg.validate()?;
        let zeros = || {
            params
                .iter()
                .map(|p| Matrix::zeros(p.rows(), p.cols()))
                .collect::<Vec<_>>()
        };
        let (m, v) = match cfg.kind {
            OptimKind::Adam => (zeros(), zeros()),
            OptimKind::Sgd => (Vec::new(), Vec::new()),
        };
        Ok(Self { cfg, t: 0, m, v })
    }

    pub fn config(&self) -> &OptimConfig {
        &self.cfg
    }

    pub fn step(&mut self, params: &mut [Matrix], grads: &[Matrix]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(dim_err!(
                "{} parameters but {} gradients",
                params.len(),
                grads.len()
            ));
        }
        self.t += 1;
        let c = self.cfg;
        let lr = c.learning_rate;
        let wd = c.weight_decay;
        match c.kind {
            OptimKind::Sgd => {
                for (p, g) in params.iter_mut().zip(grads) {
                    p.same_shape(g)?;
                    for (x, &gx) in p.as_mut_slice().iter_mut().zip(g.as_slice()) {
                        *x -= lr * (gx + wd * *x);
                    }
                }
            }
            OptimKind::Adam => {
                let bc1 = 1.0 - c.beta1.powi(self.t);
                let bc2 = 1.0 - c.beta2.powi(self.t);
                for ((p, g), (m, v)) in params
                    .iter_mut()
                    .zip(grads)
                    .zip(self.m.iter_mut().zip(self.v.iter_mut()))
                {
                    p.same_shape(g)?;
                    let xs = p.as_mut_slice();
                    let ms = m.as_mut_slice();
                    let vs = v.as_mut_slice();
                    for i in 0..xs.len() {
                        let gx = g.as_slice()[i] + wd * xs[i];
                        ms[i] = c.beta1 * ms[i] + (1.0 - c.beta1) * gx;
                        vs[i] = c.beta2 * vs[i] + (1.0 - c.beta2) * gx * gx;
                        let mh = ms[i] / bc1;
                        let vh = vs[i] / bc2;
                        xs[i] -= lr * mh / (vh.sqrt() + c.epsilon);
                    }
                }
            }
        }
        Ok(())
    }
}

/// Tracks the best value seen and signals when it has stalled for `patience` steps.
#[derive(Clone, Debug)]
pub struct EarlyStopping {
    rule: EarlyStop,
    best: f64,
    best_step: usize,
    stale: usize,
    step: usize,
}

impl EarlyStopping {
    pub fn new(rule: EarlyStop) -> Self {
        Self {
            rule,
            best: f64::INFINITY,
            best_step: 0,
            stale: 0,
            step: 0,
        }
    }

    /// Records `value`; returns `true` when it is a new best.
    pub fn observe(&mut self, value: f64) -> bool {
        self.step += 1;
        if value < self.best - self.rule.min_improvement || self.best == f64::INFINITY {
            self.best = value;
            self.best_step = self.step;
            self.stale = 0;
            true
        } else {
            self.stale += 1;
            false
        }
    }

    pub fn should_stop(&self) -> bool {
        self.stale >= self.rule.patience
    }

    pub fn best(&self) -> f64 {
        self.best
    }

    /// 1-based step at which the best value was observed.
    pub fn best_step(&self) -> usize {
        self.best_step
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sgd_with_weight_decay() {
        let mut p = vec![Matrix::scalar(2.0)];
        let mut opt = Optimizer::new(OptimConfig::sgd(0.1, 0.5), &p).unwrap();
        opt.step(&mut p, &[Matrix::scalar(1.0)]).unwrap();
        // 2 - 0.1 * (1 + 0.5 * 2)
        assert!((p[0].item() - 1.8).abs() < 1e-15);
    }

    #[test]
    fn adam_first_step_moves_by_learning_rate() {
        let mut p = vec![Matrix::from_rows(&[&[1.0, -1.0]])];
        let mut opt = Optimizer::new(OptimConfig::adam(0.1), &p).unwrap();
        opt.step(&mut p, &[Matrix::from_rows(&[&[3.0, -0.2]])]).unwrap();
        assert!((p[0].get(0, 0) - 0.9).abs() < 1e-6);
        assert!((p[0].get(0, 1) + 0.9).abs() < 1e-6);
    }

    #[test]
    fn adam_minimizes_a_quadratic() {
        let mut p = vec![Matrix::from_rows(&[&[5.0, -3.0]])];
        let mut opt = Optimizer::new(OptimConfig::adam(0.1), &p).unwrap();
        for _ in 0..500 {
            let g = p[0].scale(2.0);
            opt.step(&mut p, &[g]).unwrap();
        }
        assert!(p[0].sum_squares() < 1e-4);
    }

    #[test]
    fn rejects_bad_configs() {
        let p = [Matrix::scalar(0.0)];
        assert!(Optimizer::new(OptimConfig::adam(0.0), &p).is_err());
        let mut c = OptimConfig::adam(0.1);
        c.early_stop.patience = 0;
        assert!(Optimizer::new(c, &p).is_err());
    }

    #[test]
    fn early_stopping_counts_stale_steps() {
        let mut es = EarlyStopping::new(EarlyStop {
            patience: 2,
            min_improvement: 0.1,
        });
        assert!(es.observe(1.0));
        assert!(!es.observe(0.95));
        assert!(!es.should_stop());
        assert!(!es.observe(0.95));
        assert!(es.should_stop());
        assert_eq!(es.best_step(), 1);
    }
}
