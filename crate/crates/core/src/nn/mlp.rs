//! Feedforward networks `f(x) = (ℓ_h ∘ … ∘ ℓ_1)(x)` with `ℓ_i(z) = σ(W_i z + b_i)`
//! on hidden layers and an affine output layer.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::dataset::Dataset;
use super::loss::LossKind;
use super::matrix::{gemm, Matrix};
use super::tape::Var;
use crate::error::{dim_err, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Tanh,
    Relu,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.max(0.0),
        }
    }

    pub fn on_tape(self, v: Var<'_>) -> Var<'_> {
        match self {
            Activation::Tanh => v.tanh(),
            Activation::Relu => v.relu(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Init {
    /// Every weight and bias drawn from 𝒩(0, 1).
    StandardNormal,
    /// Uniform on ±sqrt(6 / (fan_in + fan_out)), zero biases.
    Glorot,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    /// `n_out × n_in`
    pub weight: Matrix,
    /// `n_out × 1`
    pub bias: Matrix,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    layers: Vec<Layer>,
    activation: Activation,
}

impl Mlp {
    pub fn new(layers: Vec<Layer>, activation: Activation) -> Result<Self> {
        if layers.len() < 2 {
            return Err(Error::InvalidArchitecture(format!(
                "need at least one hidden and one output layer, got {} layers",
                layers.len()
            )));
        }
        for (i, layer) in layers.iter().enumerate() {
            if layer.bias.shape() != (layer.weight.rows(), 1) {
                return Err(dim_err!(
                    "layer {i}: bias {:?} does not match weight {:?}",
                    layer.bias.shape(),
                    layer.weight.shape()
                ));
            }
            if i > 0 && layer.weight.cols() != layers[i - 1].weight.rows() {
                return Err(dim_err!(
                    "layer {i} expects {} inputs but layer {} has {} outputs",
                    layer.weight.cols(),
                    i - 1,
                    layers[i - 1].weight.rows()
                ));
            }
        }
        Ok(Self { layers, activation })
    }

    pub fn init(dims: &[usize], activation: Activation, init: Init, seed: u64) -> Result<Self> {
        if dims.len() < 3 {
            return Err(Error::InvalidArchitecture(format!(
                "dims {dims:?} leave no hidden layer"
            )));
        }
        if dims.contains(&0) {
            return Err(Error::InvalidArchitecture(format!(
                "dims {dims:?} contain a zero width"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = dims
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                match init {
                    Init::StandardNormal => {
                        let weight =
                            Matrix::from_fn(fan_out, fan_in, |_, _| rng.sample(StandardNormal));
                        let bias = Matrix::from_fn(fan_out, 1, |_, _| rng.sample(StandardNormal));
                        Layer { weight, bias }
                    }
                    Init::Glorot => {
                        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                        let weight = Matrix::from_fn(fan_out, fan_in, |_, _| {
                            rng.random_range(-limit..limit)
                        });
                        Layer {
                            weight,
                            bias: Matrix::zeros(fan_out, 1),
                        }
                    }
                }
            })
            .collect();
        Self::new(layers, activation)
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    /// Layer widths from input to output.
    pub fn dims(&self) -> Vec<usize> {
        let mut dims = vec![self.layers[0].weight.cols()];
        dims.extend(self.layers.iter().map(|l| l.weight.rows()));
        dims
    }

    pub fn hidden_widths(&self) -> Vec<usize> {
        self.layers[..self.layers.len() - 1]
            .iter()
            .map(|l| l.weight.rows())
            .collect()
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weight.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].weight.rows()
    }

    /// Total number of weights and biases.
    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.len() + l.bias.len())
            .sum()
    }

    pub fn same_architecture(&self, other: &Mlp) -> Result<()> {
        if self.dims() != other.dims() || self.activation != other.activation {
            return Err(dim_err!(
                "architectures differ: {:?}/{:?} vs {:?}/{:?}",
                self.dims(),
                self.activation,
                other.dims(),
                other.activation
            ));
        }
        Ok(())
    }

    /// Parameter matrices in the order `W_1, b_1, W_2, b_2, …`.
    pub fn params(&self) -> Vec<&Matrix> {
        self.layers
            .iter()
            .flat_map(|l| [&l.weight, &l.bias])
            .collect()
    }

    /// Rebuilds a model of this architecture from matrices in [`Mlp::params`] order.
    pub fn with_params(&self, params: Vec<Matrix>) -> Result<Mlp> {
        if params.len() != 2 * self.layers.len() {
            return Err(dim_err!(
                "expected {} parameter matrices, got {}",
                2 * self.layers.len(),
                params.len()
            ));
        }
        let mut it = params.into_iter();
        let mut layers = Vec::with_capacity(self.layers.len());
        for old in &self.layers {
            let weight = it.next().unwrap();
            let bias = it.next().unwrap();
            if weight.shape() != old.weight.shape() || bias.shape() != old.bias.shape() {
                return Err(dim_err!("parameter shapes do not match the architecture"));
            }
            layers.push(Layer { weight, bias });
        }
        Mlp::new(layers, self.activation)
    }

    /// Every parameter concatenated in [`Mlp::params`] order.
    pub fn flatten(&self) -> Vec<f64> {
        self.params()
            .into_iter()
            .flat_map(|m| m.as_slice().iter().copied())
            .collect()
    }

    pub fn unflatten(&self, flat: &[f64]) -> Result<Mlp> {
        if flat.len() != self.param_count() {
            return Err(dim_err!(
                "flat vector has {} entries, model has {} parameters",
                flat.len(),
                self.param_count()
            ));
        }
        let mut offset = 0;
        let params = self
            .params()
            .into_iter()
            .map(|m| {
                let n = m.len();
                let out = Matrix::new(m.rows(), m.cols(), flat[offset..offset + n].to_vec());
                offset += n;
                out
            })
            .collect::<Result<Vec<_>>>()?;
        self.with_params(params)
    }

    /// Row `b` of the output is `f(batch row b)`.
    pub fn forward(&self, batch: &Matrix) -> Result<Matrix> {
        if batch.cols() != self.input_dim() {
            return Err(dim_err!(
                "batch has {} features, model expects {}",
                batch.cols(),
                self.input_dim()
            ));
        }
        let last = self.layers.len() - 1;
        let mut z = batch.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            let mut next = gemm(&z, false, &layer.weight, true)?;
            let bias = layer.bias.as_slice();
            for r in 0..next.rows() {
                for (x, b) in next.row_mut(r).iter_mut().zip(bias) {
                    *x += b;
                    if i < last {
                        *x = self.activation.apply(*x);
                    }
                }
            }
            z = next;
        }
        Ok(z)
    }

    /// Mean loss over `data`.
    pub fn cost(&self, data: &Dataset, loss: LossKind) -> Result<f64> {
        data.check_loss(loss)?;
        self.check_data(data)?;
        let out = self.forward(data.inputs())?;
        loss.evaluate(&out, data.targets())
    }

    /// Fraction of rows whose output argmax equals the target argmax.
    pub fn accuracy(&self, data: &Dataset) -> Result<f64> {
        data.require_classification()?;
        self.check_data(data)?;
        let out = self.forward(data.inputs())?;
        let hits = (0..out.rows())
            .filter(|&r| out.argmax_row(r) == data.targets().argmax_row(r))
            .count();
        Ok(hits as f64 / out.rows() as f64)
    }

    pub fn check_data(&self, data: &Dataset) -> Result<()> {
        if data.input_dim() != self.input_dim() || data.output_dim() != self.output_dim() {
            return Err(dim_err!(
                "data is {}→{}, model is {}→{}",
                data.input_dim(),
                data.output_dim(),
                self.input_dim(),
                self.output_dim()
            ));
        }
        Ok(())
    }
}

/// Forward pass on a tape, given per-layer `(weight, bias)` variables.
pub fn forward_on_tape<'t>(
    layers: &[(Var<'t>, Var<'t>)],
    activation: Activation,
    input: Var<'t>,
) -> Result<Var<'t>> {
    let last = layers.len() - 1;
    let mut z = input;
    for (i, &(w, b)) in layers.iter().enumerate() {
        z = z.matmul_nt(w)?.add_bias(b)?;
        if i < last {
            z = activation.on_tape(z);
        }
    }
    Ok(z)
}

/// Loss of the recorded network output against fixed targets.
pub fn loss_on_tape<'t>(
    output: Var<'t>,
    targets: std::rc::Rc<Matrix>,
    loss: LossKind,
) -> Result<Var<'t>> {
    match loss {
        LossKind::Mse => output.mse(targets),
        LossKind::CrossEntropy => output.softmax_cross_entropy(targets),
    }
}
