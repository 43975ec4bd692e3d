use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Error, Result};
use crate::nn::{Layer, Matrix, Mlp};
use crate::sinkhorn::{permutation_matrix, permutation_of, round_plan, sinkhorn, SinkhornConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlanMode {
    /// Unconstrained parameters, passed through Sinkhorn before use.
    SoftParams,
    /// 0/1 permutation matrices.
    Hard,
}

/// One square matrix per hidden layer. The input and output layers are never
/// permuted.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawPlan", into = "RawPlan")]
pub struct TransportPlan {
    mats: Vec<Matrix>,
    mode: PlanMode,
    sinkhorn: SinkhornConfig,
}

#[derive(Serialize, Deserialize)]
struct RawPlan {
    mode: PlanMode,
    sinkhorn: SinkhornConfig,
    mats: Vec<Matrix>,
}

impl TryFrom<RawPlan> for TransportPlan {
    type Error = Error;

    fn try_from(raw: RawPlan) -> Result<Self> {
        match raw.mode {
            PlanMode::Hard => Self::hard(raw.mats),
            PlanMode::SoftParams => Self::soft_params(raw.mats, raw.sinkhorn),
        }
    }
}

impl From<TransportPlan> for RawPlan {
    fn from(p: TransportPlan) -> Self {
        RawPlan {
            mode: p.mode,
            sinkhorn: p.sinkhorn,
            mats: p.mats,
        }
    }
}

impl TransportPlan {
    pub fn hard(mats: Vec<Matrix>) -> Result<Self> {
        if let Some(i) = mats.iter().position(|m| permutation_of(m).is_none()) {
            return Err(Error::InvalidInput(format!(
                "plan matrix {i} is not a permutation matrix"
            )));
        }
        Ok(Self {
            mats,
            mode: PlanMode::Hard,
            sinkhorn: SinkhornConfig::default(),
        })
    }

    pub fn soft_params(mats: Vec<Matrix>, sinkhorn: SinkhornConfig) -> Result<Self> {
        sinkhorn.validate()?;
        if let Some(m) = mats.iter().find(|m| m.rows() != m.cols()) {
            return Err(dim_err!("plan matrices must be square, got {:?}", m.shape()));
        }
        Ok(Self {
            mats,
            mode: PlanMode::SoftParams,
            sinkhorn,
        })
    }

    pub fn from_permutations(perms: &[Vec<usize>]) -> Result<Self> {
        Self::hard(perms.iter().map(|p| permutation_matrix(p)).collect())
    }

    pub fn identity(widths: &[usize]) -> Self {
        Self {
            mats: widths.iter().map(|&w| Matrix::identity(w)).collect(),
            mode: PlanMode::Hard,
            sinkhorn: SinkhornConfig::default(),
        }
    }

    /// Soft parameters starting at the identity.
    pub fn soft_identity(widths: &[usize], sinkhorn: SinkhornConfig) -> Result<Self> {
        Self::soft_params(widths.iter().map(|&w| Matrix::identity(w)).collect(), sinkhorn)
    }

    pub fn mats(&self) -> &[Matrix] {
        &self.mats
    }

    pub fn mode(&self) -> PlanMode {
        self.mode
    }

    pub fn sinkhorn_config(&self) -> &SinkhornConfig {
        &self.sinkhorn
    }

    pub fn widths(&self) -> Vec<usize> {
        self.mats.iter().map(Matrix::rows).collect()
    }

    /// Row `r` of layer `i` takes unit `perms[i][r]` of the source. Hard plans only.
    pub fn permutations(&self) -> Option<Vec<Vec<usize>>> {
        self.mats.iter().map(permutation_of).collect()
    }

    /// The matrices actually applied to a model: as stored for hard plans,
    /// `S_τ(X_i)` for soft parameters.
    pub fn effective(&self) -> Result<Vec<Matrix>> {
        match self.mode {
            PlanMode::Hard => Ok(self.mats.clone()),
            PlanMode::SoftParams => self
                .mats
                .iter()
                .map(|x| Ok(sinkhorn(x, &self.sinkhorn)?.into_matrix()))
                .collect(),
        }
    }

    /// Hard plan by rounding each effective matrix with the Hungarian method.
    pub fn rounded(&self) -> Result<TransportPlan> {
        match self.mode {
            PlanMode::Hard => Ok(self.clone()),
            PlanMode::SoftParams => {
                let mats = self.effective()?.iter().map(round_plan).collect::<Result<_>>()?;
                Self::hard(mats)
            }
        }
    }

    /// Transposed matrices; undoes a hard plan.
    pub fn inverse(&self) -> Result<TransportPlan> {
        if self.mode != PlanMode::Hard {
            return Err(Error::InvalidInput("only hard plans can be inverted".into()));
        }
        Self::hard(self.mats.iter().map(Matrix::transpose).collect())
    }

    pub fn check_model(&self, model: &Mlp) -> Result<()> {
        let widths = model.hidden_widths();
        if self.widths() != widths {
            return Err(dim_err!(
                "plan widths {:?} do not match hidden widths {:?}",
                self.widths(),
                widths
            ));
        }
        Ok(())
    }
}

/// Re-based model: `W'_i = P_i W_i P_{i−1}ᵀ`, `b'_i = P_i b_i`, with
/// `P_0 = P_h = I`. Soft plans substitute `S_τ(X_i)` for `P_i`.
pub fn apply_plan(model: &Mlp, plan: &TransportPlan) -> Result<Mlp> {
    plan.check_model(model)?;
    match plan.mode {
        PlanMode::Hard => {
            let perms = plan.permutations().expect("hard plans hold permutations");
            apply_permutations(model, &perms)
        }
        PlanMode::SoftParams => apply_matrices(model, &plan.effective()?),
    }
}

/// Exact gather; no arithmetic touches the weights.
fn apply_permutations(model: &Mlp, perms: &[Vec<usize>]) -> Result<Mlp> {
    let h = perms.len();
    let layers = model
        .layers()
        .iter()
        .enumerate()
        .map(|(i, layer)| {
            let out = (i < h).then(|| &perms[i]);
            let inp = (i > 0).then(|| &perms[i - 1]);
            let row = |r: usize| out.map_or(r, |p| p[r]);
            let col = |c: usize| inp.map_or(c, |p| p[c]);
            let w = &layer.weight;
            Layer {
                weight: Matrix::from_fn(w.rows(), w.cols(), |r, c| w.get(row(r), col(c))),
                bias: Matrix::from_fn(layer.bias.rows(), 1, |r, _| layer.bias.get(row(r), 0)),
            }
        })
        .collect();
    Mlp::new(layers, model.activation())
}

fn apply_matrices(model: &Mlp, mats: &[Matrix]) -> Result<Mlp> {
    let h = mats.len();
    let layers = model
        .layers()
        .iter()
        .enumerate()
        .map(|(i, layer)| {
            let mut w = layer.weight.clone();
            let mut b = layer.bias.clone();
            if i < h {
                w = mats[i].matmul(&w)?;
                b = mats[i].matmul(&b)?;
            }
            if i > 0 {
                w = crate::nn::matrix::gemm(&w, false, &mats[i - 1], true)?;
            }
            Ok(Layer { weight: w, bias: b })
        })
        .collect::<Result<Vec<_>>>()?;
    Mlp::new(layers, model.activation())
}

/// `(1−λ)·a + λ·b`, entrywise, evaluated as `a + λ(b − a)` so that both
/// endpoints and the `a == b` case are exact.
pub fn interpolate(a: &Mlp, b: &Mlp, lambda: f64) -> Result<Mlp> {
    a.same_architecture(b)?;
    check_lambda(lambda)?;
    if lambda == 1.0 {
        return Ok(b.clone());
    }
    let params = a
        .params()
        .into_iter()
        .zip(b.params())
        .map(|(x, y)| x.zip_map(y, |p, q| p + lambda * (q - p)))
        .collect::<Result<Vec<_>>>()?;
    a.with_params(params)
}

pub(crate) fn check_lambda(lambda: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::InvalidInput(format!("lambda {lambda} outside [0, 1]")));
    }
    Ok(())
}

/// `Σ |θ_a − θ_b|` over every weight and bias.
pub fn l1_distance(a: &Mlp, b: &Mlp) -> Result<f64> {
    a.same_architecture(b)?;
    Ok(a.flatten().iter().zip(b.flatten()).map(|(x, y)| (x - y).abs()).sum())
}

/// `Σ (θ_a − θ_b)²` over every weight and bias.
pub fn squared_distance(a: &Mlp, b: &Mlp) -> Result<f64> {
    a.same_architecture(b)?;
    Ok(a.flatten().iter().zip(b.flatten()).map(|(x, y)| (x - y) * (x - y)).sum())
}
