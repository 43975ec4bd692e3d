//! Entropy-regularized Sinkhorn operator and hard-assignment rounding.
//!
//! `S_τ^{(t)}(X)` starts from `exp(X/τ)` and applies `t` rounds of row
//! normalization followed by column normalization, so column sums are exact
//! and row sums converge.

mod hungarian;

use std::rc::Rc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

pub use hungarian::{assignment_value, hungarian, permutation_matrix, permutation_of, Objective};

use crate::error::{dim_err, Error, Result};
use crate::nn::loss::log_sum_exp;
use crate::nn::{Matrix, Var};

/// Marginal residual below which the implicit gradient is trusted.
pub const IMPLICIT_TOLERANCE: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradMode {
    /// Reverse-mode through every iteration.
    Unrolled,
    /// Implicit differentiation at the converged fixed point.
    Implicit,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SinkhornConfig {
    pub tau: f64,
    pub iters: usize,
    pub grad_mode: GradMode,
    pub log_domain: bool,
}

impl Default for SinkhornConfig {
    fn default() -> Self {
        Self {
            tau: 1.0,
            iters: 20,
            grad_mode: GradMode::Unrolled,
            log_domain: true,
        }
    }
}

impl SinkhornConfig {
    pub fn new(tau: f64, iters: usize) -> Self {
        Self {
            tau,
            iters,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0) || !self.tau.is_finite() {
            return Err(Error::Config(format!("tau must be positive, got {}", self.tau)));
        }
        if self.iters == 0 {
            return Err(Error::Config("sinkhorn needs at least one iteration".into()));
        }
        Ok(())
    }
}

/// Square nonnegative matrix with unit column sums and near-unit row sums.
#[derive(Clone, Debug, PartialEq)]
pub struct DoublyStochastic(Matrix);

impl DoublyStochastic {
    pub fn as_matrix(&self) -> &Matrix {
        &self.0
    }

    pub fn into_matrix(self) -> Matrix {
        self.0
    }

    /// Largest deviation of a row sum from 1.
    pub fn row_residual(&self) -> f64 {
        row_residual(&self.0)
    }

    /// Largest deviation of a column sum from 1.
    pub fn col_residual(&self) -> f64 {
        self.0.col_sums().iter().fold(0.0, |m, s| m.max((s - 1.0).abs()))
    }
}

fn row_residual(p: &Matrix) -> f64 {
    p.row_sums().iter().fold(0.0, |m, s| m.max((s - 1.0).abs()))
}

fn check_input(x: &Matrix, cfg: &SinkhornConfig) -> Result<()> {
    cfg.validate()?;
    if x.rows() != x.cols() {
        return Err(dim_err!("sinkhorn needs a square matrix, got {:?}", x.shape()));
    }
    if !x.is_finite() {
        return Err(Error::InvalidInput("sinkhorn input has non-finite entries".into()));
    }
    Ok(())
}

pub fn sinkhorn(x: &Matrix, cfg: &SinkhornConfig) -> Result<DoublyStochastic> {
    check_input(x, cfg)?;
    let p = if cfg.log_domain {
        let mut l = x.scale(1.0 / cfg.tau);
        for _ in 0..cfg.iters {
            log_normalize_rows(&mut l);
            log_normalize_cols(&mut l);
        }
        l.map(f64::exp)
    } else {
        let mut k = x.map(|v| (v / cfg.tau).exp());
        for _ in 0..cfg.iters {
            normalize_rows(&mut k);
            normalize_cols(&mut k);
        }
        k
    };
    Ok(DoublyStochastic(p))
}

fn log_normalize_rows(l: &mut Matrix) {
    for r in 0..l.rows() {
        let row = l.row_mut(r);
        let z = log_sum_exp(row);
        row.iter_mut().for_each(|v| *v -= z);
    }
}

fn log_normalize_cols(l: &mut Matrix) {
    let (rows, cols) = l.shape();
    let mut col = vec![0.0; rows];
    for c in 0..cols {
        for (r, v) in col.iter_mut().enumerate() {
            *v = l.get(r, c);
        }
        let z = log_sum_exp(&col);
        for r in 0..rows {
            l.set(r, c, col[r] - z);
        }
    }
}

fn normalize_rows(k: &mut Matrix) {
    for r in 0..k.rows() {
        let row = k.row_mut(r);
        let s: f64 = row.iter().sum();
        row.iter_mut().for_each(|v| *v /= s);
    }
}

fn normalize_cols(k: &mut Matrix) {
    let sums = k.col_sums();
    let cols = k.cols();
    for (i, v) in k.as_mut_slice().iter_mut().enumerate() {
        *v /= sums[i % cols];
    }
}

/// Gradient of `<upstream, S_τ(X)>` with respect to `X`.
pub fn sinkhorn_vjp(x: &Matrix, cfg: &SinkhornConfig, upstream: &Matrix) -> Result<Matrix> {
    check_input(x, cfg)?;
    x.same_shape(upstream)?;
    match cfg.grad_mode {
        GradMode::Unrolled => Ok(unrolled_vjp(x, cfg, upstream)),
        GradMode::Implicit => {
            let p = sinkhorn(x, cfg)?.into_matrix();
            check_converged(&p)?;
            implicit_vjp(&p, cfg.tau, upstream)
        }
    }
}

fn check_converged(p: &Matrix) -> Result<()> {
    let residual = row_residual(p);
    if residual.is_nan() || residual >= IMPLICIT_TOLERANCE {
        return Err(Error::NonConvergence {
            residual,
            tolerance: IMPLICIT_TOLERANCE,
        });
    }
    Ok(())
}

/// Reverse pass through the log-domain iteration, replaying stored iterates.
fn unrolled_vjp(x: &Matrix, cfg: &SinkhornConfig, upstream: &Matrix) -> Matrix {
    let mut l = x.scale(1.0 / cfg.tau);
    // After-row and after-column iterates of each round.
    let mut trace = Vec::with_capacity(cfg.iters);
    for _ in 0..cfg.iters {
        log_normalize_rows(&mut l);
        let a = l.clone();
        log_normalize_cols(&mut l);
        trace.push((a, l.clone()));
    }
    let p = l.map(f64::exp);
    let mut g = upstream.hadamard(&p).expect("shapes checked");
    for (a, after_cols) in trace.iter().rev() {
        // y = x - lse_col(x): dx = dy - softmax_col(x) * colsum(dy)
        let sums = g.col_sums();
        let cols = g.cols();
        for (i, (gv, yv)) in g.as_mut_slice().iter_mut().zip(after_cols.as_slice()).enumerate() {
            *gv -= yv.exp() * sums[i % cols];
        }
        // y = x - lse_row(x): dx = dy - softmax_row(x) * rowsum(dy)
        for r in 0..g.rows() {
            let s: f64 = g.row(r).iter().sum();
            for (gv, av) in g.row_mut(r).iter_mut().zip(a.row(r)) {
                *gv -= av.exp() * s;
            }
        }
    }
    g.scale(1.0 / cfg.tau)
}

/// Gradient at a fixed point `P` with unit marginals.
///
/// Writing `P_ij = exp((X_ij + f_i + g_j)/τ)` with potentials fixed by the
/// marginal constraints, the gradient is `(1/τ) P ⊙ (G − α1ᵀ − 1βᵀ)` where
/// `α, β` make both the row and column sums of `P ⊙ (G − α1ᵀ − 1βᵀ)` vanish.
/// The system is singular along `(α + c, β − c)`; `β_{n−1} = 0` pins it.
fn implicit_vjp(p: &Matrix, tau: f64, upstream: &Matrix) -> Result<Matrix> {
    let n = p.rows();
    let pg = p.hadamard(upstream)?;
    let hr = pg.row_sums();
    let hc = pg.col_sums();
    let r = p.row_sums();
    let c = p.col_sums();

    let mut beta = vec![0.0; n];
    if n > 1 {
        let m = n - 1;
        // (diag(c) − Pᵀ diag(1/r) P) β = h_c − Pᵀ diag(1/r) h_r, first m equations.
        let a = DMatrix::from_fn(m, m, |j, k| {
            let s: f64 = (0..n).map(|i| p.get(i, j) * p.get(i, k) / r[i]).sum();
            if j == k {
                c[j] - s
            } else {
                -s
            }
        });
        let b = DVector::from_fn(m, |j, _| {
            hc[j] - (0..n).map(|i| p.get(i, j) * hr[i] / r[i]).sum::<f64>()
        });
        let sol = a
            .lu()
            .solve(&b)
            .ok_or_else(|| Error::InvalidInput("implicit sinkhorn system is singular".into()))?;
        beta[..m].copy_from_slice(sol.as_slice());
    }
    let alpha: Vec<f64> = (0..n)
        .map(|i| (hr[i] - (0..n).map(|j| p.get(i, j) * beta[j]).sum::<f64>()) / r[i])
        .collect();
    Ok(Matrix::from_fn(n, n, |i, j| {
        p.get(i, j) * (upstream.get(i, j) - alpha[i] - beta[j]) / tau
    }))
}

/// Records `S_τ(x)` on `x`'s tape using the configured gradient mode.
pub fn sinkhorn_on_tape<'t>(x: Var<'t>, cfg: &SinkhornConfig) -> Result<Var<'t>> {
    let xv = x.value();
    check_input(&xv, cfg)?;
    match cfg.grad_mode {
        GradMode::Unrolled if cfg.log_domain => {
            let mut l = x.scale(1.0 / cfg.tau);
            for _ in 0..cfg.iters {
                l = l.log_normalize_rows().log_normalize_cols();
            }
            Ok(l.exp())
        }
        GradMode::Unrolled => {
            let mut k = x.scale(1.0 / cfg.tau).exp();
            for _ in 0..cfg.iters {
                k = k.normalize_rows().normalize_cols();
            }
            Ok(k)
        }
        GradMode::Implicit => {
            let p = sinkhorn(&xv, cfg)?.into_matrix();
            check_converged(&p)?;
            let fixed = Rc::new(p.clone());
            let tau = cfg.tau;
            let vjp = Rc::new(move |g: &Matrix| implicit_vjp(&fixed, tau, g));
            Ok(x.custom(p, vjp))
        }
    }
}

/// Hard permutation matrix maximizing the mass picked from `soft`.
pub fn round_plan(soft: &Matrix) -> Result<Matrix> {
    Ok(permutation_matrix(&hungarian(soft, Objective::Maximize)?))
}

/// `−Σ p ln p` with `0 ln 0 = 0`.
pub fn entropy(p: &Matrix) -> Result<f64> {
    if p.as_slice().iter().any(|&v| !(v >= 0.0)) {
        return Err(Error::InvalidInput("entropy needs nonnegative entries".into()));
    }
    Ok(-p
        .as_slice()
        .iter()
        .filter(|&&v| v > 0.0)
        .map(|&v| v * v.ln())
        .sum::<f64>())
}
