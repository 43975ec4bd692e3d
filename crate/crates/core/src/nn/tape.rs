//! Reverse-mode differentiation over a small primitive set.
//!
//! A [`Tape`] records every operation applied to [`Var`]s in creation order,
//! so a node's inputs always precede it. [`Tape::gradients`] walks the record
//! backwards from a scalar output. Only nodes created with [`Tape::leaf`] can
//! be asked for gradients; [`Tape::constant`] nodes are inert.

use std::cell::RefCell;
use std::rc::Rc;

use super::loss::{log_sum_exp, softmax_row};
use super::matrix::{gemm, Matrix};
use crate::error::{dim_err, Error, Result};

/// Vector-Jacobian product of a custom node: upstream gradient in, input gradient out.
pub type VjpFn = Rc<dyn Fn(&Matrix) -> Result<Matrix>>;

enum Op {
    Leaf,
    Constant,
    MatMul { a: usize, b: usize, ta: bool, tb: bool },
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    AddBias { z: usize, bias: usize },
    Transpose(usize),
    Tanh(usize),
    Relu(usize),
    Exp(usize),
    NormRows(usize),
    NormCols(usize),
    LogNormRows(usize),
    LogNormCols(usize),
    Sum(usize),
    SumSquares(usize),
    Mse { pred: usize, target: Rc<Matrix> },
    SoftmaxXent { logits: usize, target: Rc<Matrix> },
    Custom { input: usize, vjp: VjpFn },
}

struct Node {
    value: Rc<Matrix>,
    op: Op,
    needs_grad: bool,
}

#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var#{}{:?}", self.id, self.shape())
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// A differentiable input.
    pub fn leaf(&self, value: Matrix) -> Var<'_> {
        self.push(Rc::new(value), Op::Leaf, true)
    }

    pub fn constant(&self, value: Matrix) -> Var<'_> {
        self.push(Rc::new(value), Op::Constant, false)
    }

    /// Shares an existing buffer as a constant without copying it.
    pub fn constant_rc(&self, value: Rc<Matrix>) -> Var<'_> {
        self.push(value, Op::Constant, false)
    }

    /// Records a node whose value was computed outside the tape and whose
    /// backward pass is supplied by `vjp`.
    pub fn custom<'t>(&'t self, input: Var<'t>, value: Matrix, vjp: VjpFn) -> Var<'t> {
        let needs = self.needs(input.id);
        self.push(
            Rc::new(value),
            Op::Custom {
                input: input.id,
                vjp,
            },
            needs,
        )
    }

    fn push(&self, value: Rc<Matrix>, op: Op, needs_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    fn value(&self, id: usize) -> Rc<Matrix> {
        Rc::clone(&self.nodes.borrow()[id].value)
    }

    fn needs(&self, id: usize) -> bool {
        self.nodes.borrow()[id].needs_grad
    }

    /// Gradients of the scalar `output` with respect to each of `leaves`.
    pub fn gradients(&self, output: Var<'_>, leaves: &[Var<'_>]) -> Result<Vec<Matrix>> {
        let nodes = self.nodes.borrow();
        if output.shape() != (1, 1) {
            return Err(Error::Usage(format!(
                "gradients need a scalar output, got shape {:?}",
                output.shape()
            )));
        }
        for leaf in leaves {
            if !matches!(nodes[leaf.id].op, Op::Leaf) {
                return Err(Error::Usage(format!(
                    "node {} is not marked differentiable",
                    leaf.id
                )));
            }
        }

        let mut grads: Vec<Option<Matrix>> = vec![None; output.id + 1];
        grads[output.id] = Some(Matrix::scalar(1.0));

        for id in (0..=output.id).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &nodes[id];
            if !node.needs_grad {
                continue;
            }
            let y = &node.value;
            let val = |i: usize| &nodes[i].value;
            let wants = |i: usize| nodes[i].needs_grad;
            let mut push = |i: usize, d: Matrix| -> Result<()> {
                match &mut grads[i] {
                    Some(acc) => acc.axpy(1.0, &d),
                    slot @ None => {
                        *slot = Some(d);
                        Ok(())
                    }
                }
            };
            match &node.op {
                Op::Leaf => {
                    // leaves keep their accumulated gradient
                    grads[id] = Some(g);
                }
                Op::Constant => {}
                &Op::MatMul { a, b, ta, tb } => {
                    let (av, bv) = (val(a), val(b));
                    if wants(a) {
                        let d = if ta {
                            gemm(bv, tb, &g, true)?
                        } else {
                            gemm(&g, false, bv, !tb)?
                        };
                        push(a, d)?;
                    }
                    if wants(b) {
                        let d = if tb {
                            gemm(&g, true, av, ta)?
                        } else {
                            gemm(av, !ta, &g, false)?
                        };
                        push(b, d)?;
                    }
                }
                &Op::Add(a, b) => {
                    if wants(a) {
                        push(a, g.clone())?;
                    }
                    if wants(b) {
                        push(b, g)?;
                    }
                }
                &Op::Sub(a, b) => {
                    if wants(a) {
                        push(a, g.clone())?;
                    }
                    if wants(b) {
                        push(b, g.scale(-1.0))?;
                    }
                }
                &Op::Mul(a, b) => {
                    if wants(a) {
                        push(a, g.hadamard(val(b))?)?;
                    }
                    if wants(b) {
                        push(b, g.hadamard(val(a))?)?;
                    }
                }
                &Op::Scale(a, s) => push(a, g.scale(s))?,
                &Op::AddBias { z, bias } => {
                    if wants(bias) {
                        push(bias, Matrix::column(g.col_sums())?)?;
                    }
                    if wants(z) {
                        push(z, g)?;
                    }
                }
                &Op::Transpose(a) => push(a, g.transpose())?,
                &Op::Tanh(a) => push(a, g.zip_map(y, |g, t| g * (1.0 - t * t))?)?,
                &Op::Relu(a) => push(a, g.zip_map(val(a), |g, x| if x > 0.0 { g } else { 0.0 })?)?,
                &Op::Exp(a) => push(a, g.hadamard(y)?)?,
                &Op::NormRows(a) => {
                    let sums = val(a).row_sums();
                    let mut d = g.clone();
                    for r in 0..d.rows() {
                        let dot: f64 = g.row(r).iter().zip(y.row(r)).map(|(g, y)| g * y).sum();
                        for x in d.row_mut(r) {
                            *x = (*x - dot) / sums[r];
                        }
                    }
                    push(a, d)?;
                }
                &Op::NormCols(a) => {
                    let sums = val(a).col_sums();
                    let dots = g.hadamard(y)?.col_sums();
                    let mut d = g;
                    for r in 0..d.rows() {
                        for (c, x) in d.row_mut(r).iter_mut().enumerate() {
                            *x = (*x - dots[c]) / sums[c];
                        }
                    }
                    push(a, d)?;
                }
                &Op::LogNormRows(a) => {
                    let mut d = g.clone();
                    for r in 0..d.rows() {
                        let total: f64 = g.row(r).iter().sum();
                        for (x, &ly) in d.row_mut(r).iter_mut().zip(y.row(r)) {
                            *x -= ly.exp() * total;
                        }
                    }
                    push(a, d)?;
                }
                &Op::LogNormCols(a) => {
                    let totals = g.col_sums();
                    let mut d = g;
                    for r in 0..d.rows() {
                        let yr = y.row(r).to_vec();
                        for (c, x) in d.row_mut(r).iter_mut().enumerate() {
                            *x -= yr[c].exp() * totals[c];
                        }
                    }
                    push(a, d)?;
                }
                &Op::Sum(a) => {
                    let (r, c) = val(a).shape();
                    push(a, Matrix::filled(r, c, g.item()))?;
                }
                &Op::SumSquares(a) => push(a, val(a).scale(2.0 * g.item()))?,
                Op::Mse { pred, target } => {
                    let p = val(*pred);
                    let scale = 2.0 * g.item() / p.len() as f64;
                    push(*pred, p.zip_map(target, |p, t| scale * (p - t))?)?;
                }
                Op::SoftmaxXent { logits, target } => {
                    let z = val(*logits);
                    let scale = g.item() / z.rows() as f64;
                    let mut d = Matrix::zeros(z.rows(), z.cols());
                    for r in 0..z.rows() {
                        let sm = softmax_row(z.row(r));
                        let mass: f64 = target.row(r).iter().sum();
                        for (c, x) in d.row_mut(r).iter_mut().enumerate() {
                            *x = scale * (sm[c] * mass - target.get(r, c));
                        }
                    }
                    push(*logits, d)?;
                }
                Op::Custom { input, vjp } => {
                    let d = vjp(&g)?;
                    if d.shape() != val(*input).shape() {
                        return Err(dim_err!(
                            "custom vjp returned {:?} for input of shape {:?}",
                            d.shape(),
                            val(*input).shape()
                        ));
                    }
                    push(*input, d)?;
                }
            }
        }

        Ok(leaves
            .iter()
            .map(|leaf| {
                grads[leaf.id]
                    .clone()
                    .unwrap_or_else(|| {
                        let (r, c) = nodes[leaf.id].value.shape();
                        Matrix::zeros(r, c)
                    })
            })
            .collect())
    }
}

impl<'t> Var<'t> {
    pub fn value(&self) -> Rc<Matrix> {
        self.tape.value(self.id)
    }

    pub fn shape(&self) -> (usize, usize) {
        self.tape.nodes.borrow()[self.id].value.shape()
    }

    /// Records a node computed outside the tape; see [`Tape::custom`].
    pub fn custom(self, value: Matrix, vjp: VjpFn) -> Var<'t> {
        self.tape.custom(self, value, vjp)
    }

    /// Scalar value of a 1×1 node.
    pub fn item(&self) -> f64 {
        self.value().item()
    }

    fn unary(self, value: Matrix, op: Op) -> Var<'t> {
        let needs = self.tape.needs(self.id);
        self.tape.push(Rc::new(value), op, needs)
    }

    fn binary(self, other: Var<'t>, value: Matrix, op: Op) -> Var<'t> {
        let needs = self.tape.needs(self.id) || self.tape.needs(other.id);
        self.tape.push(Rc::new(value), op, needs)
    }

    fn mm(self, other: Var<'t>, ta: bool, tb: bool) -> Result<Var<'t>> {
        let v = gemm(&self.value(), ta, &other.value(), tb)?;
        Ok(self.binary(
            other,
            v,
            Op::MatMul {
                a: self.id,
                b: other.id,
                ta,
                tb,
            },
        ))
    }

    /// `self · other`
    pub fn matmul(self, other: Var<'t>) -> Result<Var<'t>> {
        self.mm(other, false, false)
    }

    /// `self · otherᵀ`
    pub fn matmul_nt(self, other: Var<'t>) -> Result<Var<'t>> {
        self.mm(other, false, true)
    }

    /// `selfᵀ · other`
    pub fn matmul_tn(self, other: Var<'t>) -> Result<Var<'t>> {
        self.mm(other, true, false)
    }

    pub fn add(self, other: Var<'t>) -> Result<Var<'t>> {
        let v = self.value().add(&other.value())?;
        Ok(self.binary(other, v, Op::Add(self.id, other.id)))
    }

    pub fn sub(self, other: Var<'t>) -> Result<Var<'t>> {
        let v = self.value().sub(&other.value())?;
        Ok(self.binary(other, v, Op::Sub(self.id, other.id)))
    }

    /// Entrywise product.
    pub fn mul(self, other: Var<'t>) -> Result<Var<'t>> {
        let v = self.value().hadamard(&other.value())?;
        Ok(self.binary(other, v, Op::Mul(self.id, other.id)))
    }

    pub fn scale(self, s: f64) -> Var<'t> {
        let v = self.value().scale(s);
        self.unary(v, Op::Scale(self.id, s))
    }

    /// Adds the `n × 1` column `bias` to every row of the `B × n` matrix `self`.
    pub fn add_bias(self, bias: Var<'t>) -> Result<Var<'t>> {
        let z = self.value();
        let b = bias.value();
        if b.cols() != 1 || b.rows() != z.cols() {
            return Err(dim_err!(
                "bias of shape {:?} does not fit activations of shape {:?}",
                b.shape(),
                z.shape()
            ));
        }
        let mut out = (*z).clone();
        for r in 0..out.rows() {
            for (x, &bb) in out.row_mut(r).iter_mut().zip(b.as_slice()) {
                *x += bb;
            }
        }
        Ok(self.binary(
            bias,
            out,
            Op::AddBias {
                z: self.id,
                bias: bias.id,
            },
        ))
    }

    pub fn transpose(self) -> Var<'t> {
        let v = self.value().transpose();
        self.unary(v, Op::Transpose(self.id))
    }

    pub fn tanh(self) -> Var<'t> {
        let v = self.value().map(f64::tanh);
        self.unary(v, Op::Tanh(self.id))
    }

    pub fn relu(self) -> Var<'t> {
        let v = self.value().map(|x| x.max(0.0));
        self.unary(v, Op::Relu(self.id))
    }

    pub fn exp(self) -> Var<'t> {
        let v = self.value().map(f64::exp);
        self.unary(v, Op::Exp(self.id))
    }

    /// Divides every row by its sum.
    pub fn normalize_rows(self) -> Var<'t> {
        let mut v = (*self.value()).clone();
        for r in 0..v.rows() {
            let s: f64 = v.row(r).iter().sum();
            v.row_mut(r).iter_mut().for_each(|x| *x /= s);
        }
        self.unary(v, Op::NormRows(self.id))
    }

    /// Divides every column by its sum.
    pub fn normalize_cols(self) -> Var<'t> {
        let mut v = (*self.value()).clone();
        let sums = v.col_sums();
        for r in 0..v.rows() {
            v.row_mut(r).iter_mut().zip(&sums).for_each(|(x, s)| *x /= s);
        }
        self.unary(v, Op::NormCols(self.id))
    }

    /// Row normalization in log space: `x - logsumexp(row)`.
    pub fn log_normalize_rows(self) -> Var<'t> {
        let mut v = (*self.value()).clone();
        for r in 0..v.rows() {
            let lse = log_sum_exp(v.row(r));
            v.row_mut(r).iter_mut().for_each(|x| *x -= lse);
        }
        self.unary(v, Op::LogNormRows(self.id))
    }

    /// Column normalization in log space.
    pub fn log_normalize_cols(self) -> Var<'t> {
        let mut v = (*self.value()).clone();
        let t = v.transpose();
        let lses: Vec<f64> = (0..t.rows()).map(|c| log_sum_exp(t.row(c))).collect();
        for r in 0..v.rows() {
            v.row_mut(r).iter_mut().zip(&lses).for_each(|(x, l)| *x -= l);
        }
        self.unary(v, Op::LogNormCols(self.id))
    }

    pub fn sum(self) -> Var<'t> {
        let v = Matrix::scalar(self.value().sum());
        self.unary(v, Op::Sum(self.id))
    }

    pub fn sum_squares(self) -> Var<'t> {
        let v = Matrix::scalar(self.value().sum_squares());
        self.unary(v, Op::SumSquares(self.id))
    }

    /// Mean squared error against a fixed target, averaged over every entry.
    pub fn mse(self, target: Rc<Matrix>) -> Result<Var<'t>> {
        let v = super::loss::mse(&self.value(), &target)?;
        Ok(self.unary(
            Matrix::scalar(v),
            Op::Mse {
                pred: self.id,
                target,
            },
        ))
    }

    /// Softmax cross-entropy of row logits against fixed target distributions,
    /// averaged over rows.
    pub fn softmax_cross_entropy(self, target: Rc<Matrix>) -> Result<Var<'t>> {
        let v = super::loss::softmax_cross_entropy(&self.value(), &target)?;
        Ok(self.unary(
            Matrix::scalar(v),
            Op::SoftmaxXent {
                logits: self.id,
                target,
            },
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Central finite differences of `f` around `x`.
    fn numeric_grad(x: &Matrix, f: impl Fn(&Matrix) -> f64) -> Matrix {
        let h = 1e-6;
        let mut g = Matrix::zeros(x.rows(), x.cols());
        for i in 0..x.len() {
            let mut xp = x.clone();
            xp.as_mut_slice()[i] += h;
            let mut xm = x.clone();
            xm.as_mut_slice()[i] -= h;
            g.as_mut_slice()[i] = (f(&xp) - f(&xm)) / (2.0 * h);
        }
        g
    }

    fn assert_close(a: &Matrix, b: &Matrix) {
        for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
            let denom = x.abs().max(y.abs());
            if denom > 1e-8 {
                assert!((x - y).abs() / denom < 1e-4, "{x} vs {y}");
            } else {
                assert!((x - y).abs() < 1e-8, "{x} vs {y}");
            }
        }
    }

    fn sample(rows: usize, cols: usize, seed: u64) -> Matrix {
        Matrix::from_fn(rows, cols, |r, c| {
            let t = (seed as f64 + 1.0) * 0.37 + r as f64 * 1.3 + c as f64 * 0.71;
            t.sin()
        })
    }

    #[test]
    fn sum_of_squares_gradient_is_twice_input() {
        let tape = Tape::new();
        let w = sample(3, 2, 1);
        let x = tape.leaf(w.clone());
        let g = tape.gradients(x.sum_squares(), &[x]).unwrap();
        assert!(g[0].max_abs_diff(&w.scale(2.0)).unwrap() < 1e-15);
    }

    #[test]
    fn constant_cost_gives_zero_gradient() {
        let tape = Tape::new();
        let x = tape.leaf(sample(2, 2, 2));
        let c = tape.constant(sample(2, 2, 3));
        let g = tape.gradients(c.sum_squares(), &[x]).unwrap();
        assert_eq!(g[0], Matrix::zeros(2, 2));
    }

    #[test]
    fn constants_cannot_be_differentiated() {
        let tape = Tape::new();
        let c = tape.constant(sample(2, 2, 3));
        let out = c.sum();
        assert!(matches!(tape.gradients(out, &[c]), Err(Error::Usage(_))));
        let x = tape.leaf(sample(2, 2, 3));
        assert!(matches!(tape.gradients(x, &[x]), Err(Error::Usage(_))));
    }

    #[test]
    fn every_primitive_matches_finite_differences() {
        let x0 = sample(3, 3, 4).map(|v| v + 2.0); // positive for the normalizers
        let w = sample(3, 3, 5);
        let b = sample(3, 1, 6);
        let target = Rc::new(sample(3, 3, 7).map(|v| v.abs()));

        type Expr = fn(&Tape, Var<'_>, &Matrix, &Matrix, &Rc<Matrix>) -> f64;
        let exprs: Vec<(&str, Expr)> = vec![
            ("matmul", |t, x, w, _, _| {
                x.matmul(t.constant(w.clone())).unwrap().sum_squares().item()
            }),
            ("matmul_nt", |t, x, w, _, _| {
                t.constant(w.clone()).matmul_nt(x).unwrap().tanh().sum().item()
            }),
            ("matmul_tn", |_t, x, _, _, _| x.matmul_tn(x).unwrap().sum_squares().item()),
            ("bias", |t, x, _, b, _| {
                x.add_bias(t.constant(b.clone())).unwrap().relu().sum_squares().item()
            }),
            ("sub_mul", |t, x, w, _, _| {
                let c = t.constant(w.clone());
                x.sub(c).unwrap().mul(x).unwrap().scale(0.3).sum().item()
            }),
            ("transpose_add", |_, x, _, _, _| x.transpose().add(x).unwrap().exp().sum().item()),
            ("normalize", |_, x, _, _, _| {
                x.normalize_rows().normalize_cols().sum_squares().item()
            }),
            ("log_normalize", |_, x, _, _, _| {
                x.log_normalize_rows().log_normalize_cols().exp().sum_squares().item()
            }),
            ("mse", |_, x, _, _, tg| x.tanh().mse(Rc::clone(tg)).unwrap().item()),
            ("xent", |_, x, _, _, tg| x.softmax_cross_entropy(Rc::clone(tg)).unwrap().item()),
        ];

        for (name, expr) in exprs {
            let tape = Tape::new();
            let x = tape.leaf(x0.clone());
            let _ = expr(&tape, x, &w, &b, &target);
            let out = Var {
                tape: &tape,
                id: tape.len() - 1,
            };
            let g = tape.gradients(out, &[x]).unwrap();
            let num = numeric_grad(&x0, |xv| {
                let t = Tape::new();
                let v = t.leaf(xv.clone());
                expr(&t, v, &w, &b, &target)
            });
            eprintln!("checking {name}");
            assert_close(&g[0], &num);
        }
    }

    #[test]
    fn custom_node_uses_supplied_vjp() {
        let tape = Tape::new();
        let x = tape.leaf(Matrix::from_rows(&[&[1.0, 2.0]]));
        let doubled = tape.custom(
            x,
            x.value().scale(2.0),
            Rc::new(|g: &Matrix| Ok(g.scale(2.0))),
        );
        let g = tape.gradients(doubled.sum(), &[x]).unwrap();
        assert_eq!(g[0], Matrix::from_rows(&[&[2.0, 2.0]]));
    }
}
