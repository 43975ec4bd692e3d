//! Alignment costs over a plan, with gradients with respect to soft plan
//! parameters.

use std::rc::Rc;

use serde::{Deserialize, Serialize};

use super::plan::{apply_plan, check_lambda, interpolate, squared_distance, PlanMode, TransportPlan};
use crate::error::{Error, Result};
use crate::nn::mlp::{forward_on_tape, loss_on_tape};
use crate::nn::{Dataset, LossKind, Matrix, Mlp, Tape, Var};
use crate::sinkhorn::{sinkhorn_on_tape, SinkhornConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CostKind {
    /// Squared distance between `a` and the re-based `b`. Data-free.
    L2,
    /// Task cost at the midpoint of `a` and the re-based `b`.
    Mid,
    /// Task cost at a random point on the segment, λ drawn per iteration.
    Rnd,
}

impl CostKind {
    pub fn needs_data(self) -> bool {
        self != CostKind::L2
    }
}

/// `‖θ_a − π(θ_b)‖²`.
pub fn c_l2(plan: &TransportPlan, a: &Mlp, b: &Mlp) -> Result<f64> {
    squared_distance(a, &apply_plan(b, plan)?)
}

/// Task cost of `(θ_a + π(θ_b))/2` on `batch`.
pub fn c_mid(plan: &TransportPlan, a: &Mlp, b: &Mlp, batch: &Dataset, loss: LossKind) -> Result<f64> {
    c_rnd(plan, a, b, batch, loss, 0.5)
}

/// Task cost of `(1−λ)θ_a + λπ(θ_b)` on `batch`.
pub fn c_rnd(
    plan: &TransportPlan,
    a: &Mlp,
    b: &Mlp,
    batch: &Dataset,
    loss: LossKind,
    lambda: f64,
) -> Result<f64> {
    check_lambda(lambda)?;
    interpolate(a, &apply_plan(b, plan)?, lambda)?.cost(batch, loss)
}

/// Re-based layers of `model` under soft plan parameters `xs` recorded on a tape.
pub fn rebase_on_tape<'t>(
    tape: &'t Tape,
    xs: &[Var<'t>],
    model: &Mlp,
    sinkhorn: &SinkhornConfig,
) -> Result<Vec<(Var<'t>, Var<'t>)>> {
    let s = xs
        .iter()
        .map(|&x| sinkhorn_on_tape(x, sinkhorn))
        .collect::<Result<Vec<_>>>()?;
    let h = s.len();
    model
        .layers()
        .iter()
        .enumerate()
        .map(|(i, layer)| {
            let mut w = tape.constant(layer.weight.clone());
            let mut b = tape.constant(layer.bias.clone());
            if i < h {
                w = s[i].matmul(w)?;
                b = s[i].matmul(b)?;
            }
            if i > 0 {
                w = w.matmul_nt(s[i - 1])?;
            }
            Ok((w, b))
        })
        .collect()
}

/// Cost of `kind` and its gradient with respect to each soft plan matrix.
/// `lambda` is used by [`CostKind::Rnd`] only.
pub fn cost_and_grad(
    plan: &TransportPlan,
    kind: CostKind,
    a: &Mlp,
    b: &Mlp,
    batch: Option<&Dataset>,
    lambda: f64,
) -> Result<(f64, Vec<Matrix>)> {
    if plan.mode() != PlanMode::SoftParams {
        return Err(Error::InvalidInput("gradients need a soft-parameter plan".into()));
    }
    a.same_architecture(b)?;
    plan.check_model(b)?;
    let tape = Tape::new();
    let xs: Vec<_> = plan.mats().iter().map(|m| tape.leaf(m.clone())).collect();
    let rebased = rebase_on_tape(&tape, &xs, b, plan.sinkhorn_config())?;
    let cost = match kind {
        CostKind::L2 => {
            let mut total: Option<Var> = None;
            for (layer, (w, bias)) in a.layers().iter().zip(&rebased) {
                let dw = tape.constant(layer.weight.clone()).sub(*w)?.sum_squares();
                let db = tape.constant(layer.bias.clone()).sub(*bias)?.sum_squares();
                let term = dw.add(db)?;
                total = Some(match total {
                    Some(t) => t.add(term)?,
                    None => term,
                });
            }
            total.expect("models have layers")
        }
        CostKind::Mid | CostKind::Rnd => {
            let batch = batch.ok_or_else(|| Error::Config(format!("{kind:?} cost needs data")))?;
            let lambda = if kind == CostKind::Mid { 0.5 } else { lambda };
            check_lambda(lambda)?;
            let loss = LossKind::for_task(batch.task());
            a.check_data(batch)?;
            let layers = interpolate_on_tape(&tape, a, &rebased, lambda)?;
            let x = tape.constant(batch.inputs().clone());
            let out = forward_on_tape(&layers, a.activation(), x)?;
            loss_on_tape(out, Rc::new(batch.targets().clone()), loss)?
        }
    };
    let grads = tape.gradients(cost, &xs)?;
    Ok((cost.item(), grads))
}

/// `(1−λ)·a + λ·layers`, with `a` fixed.
pub fn interpolate_on_tape<'t>(
    tape: &'t Tape,
    a: &Mlp,
    layers: &[(Var<'t>, Var<'t>)],
    lambda: f64,
) -> Result<Vec<(Var<'t>, Var<'t>)>> {
    a.layers()
        .iter()
        .zip(layers)
        .map(|(la, &(w, b))| {
            let wa = tape.constant(la.weight.scale(1.0 - lambda));
            let ba = tape.constant(la.bias.scale(1.0 - lambda));
            Ok((wa.add(w.scale(lambda))?, ba.add(b.scale(lambda))?))
        })
        .collect()
}
