//! Differentiable operation set shared by every model component.
//!
//! Model code is written once against [`Ops`]. [`Eager`] evaluates directly
//! and drops intermediates; [`Tape`] records every node so that
//! [`Tape::backward`] can return gradients for all named parameters.

use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use super::kernels::{self, LayerNormCache};
use super::params::ParamStore;
use super::tensor::{round_out, Mask, Tensor};
use crate::error::{Error, Result};

pub trait Ops {
    type V: Clone;

    fn constant(&mut self, t: Tensor) -> Self::V;
    fn param(&mut self, name: &str) -> Result<Self::V>;
    fn value<'a>(&'a self, v: &'a Self::V) -> &'a Tensor;

    fn linear(&mut self, x: &Self::V, w: &Self::V, b: Option<&Self::V>) -> Result<Self::V>;
    fn matmul(&mut self, a: &Self::V, b: &Self::V, transpose_b: bool) -> Result<Self::V>;
    fn add(&mut self, a: &Self::V, b: &Self::V) -> Result<Self::V>;
    fn sub(&mut self, a: &Self::V, b: &Self::V) -> Result<Self::V>;
    fn scale(&mut self, a: &Self::V, s: f64) -> Self::V;
    fn relu(&mut self, a: &Self::V) -> Self::V;
    fn softplus(&mut self, a: &Self::V) -> Self::V;
    fn abs(&mut self, a: &Self::V) -> Self::V;
    fn layer_norm(
        &mut self,
        x: &Self::V,
        gamma: &Self::V,
        beta: &Self::V,
        eps: f64,
    ) -> Result<Self::V>;
    fn masked_softmax(&mut self, x: &Self::V, mask: &Mask) -> Result<Self::V>;
    fn gather_rows(&mut self, x: &Self::V, idx: &[usize]) -> Result<Self::V>;
    fn segment_max(&mut self, x: &Self::V, offsets: &[usize]) -> Result<Self::V>;
    fn concat_cols(&mut self, parts: &[Self::V]) -> Result<Self::V>;
    fn concat_rows(&mut self, parts: &[Self::V]) -> Result<Self::V>;
    fn slice_cols(&mut self, x: &Self::V, start: usize, end: usize) -> Result<Self::V>;
    /// Multiplies row `r` by the constant `factors[r]`.
    fn row_scale(&mut self, x: &Self::V, factors: &[f64]) -> Result<Self::V>;
    fn sum(&mut self, x: &Self::V) -> Self::V;
    /// `Σ_r weights[r] · (−log softmax(logits_r)[targets[r]])` as a 1×1 tensor.
    fn cross_entropy(
        &mut self,
        logits: &Self::V,
        targets: &[usize],
        weights: &[f64],
    ) -> Result<Self::V>;
}

fn elementwise2(op: &'static str, a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
    if a.shape() != b.shape() {
        return Err(Error::dim(op, format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    let data = a.data().iter().zip(b.data()).map(|(x, y)| f(*x, *y)).collect();
    Ok(round_out(Tensor::new(a.shape().to_vec(), data)?))
}

fn row_scale_kernel(x: &Tensor, factors: &[f64]) -> Result<Tensor> {
    if factors.len() != x.rows() {
        return Err(Error::dim("row_scale", format!("{} factors for {} rows", factors.len(), x.rows())));
    }
    let mut y = x.clone();
    for (r, f) in factors.iter().enumerate() {
        for v in y.row_mut(r) {
            *v *= f;
        }
    }
    Ok(round_out(y))
}

/// Direct evaluation backend.
pub struct Eager<'w> {
    weights: &'w ParamStore,
}

impl<'w> Eager<'w> {
    pub fn new(weights: &'w ParamStore) -> Self {
        Self { weights }
    }
}

impl Ops for Eager<'_> {
    type V = Arc<Tensor>;

    fn constant(&mut self, t: Tensor) -> Self::V {
        Arc::new(t)
    }

    fn param(&mut self, name: &str) -> Result<Self::V> {
        self.weights.get(name).cloned()
    }

    fn value<'a>(&'a self, v: &'a Self::V) -> &'a Tensor {
        v
    }

    fn linear(&mut self, x: &Self::V, w: &Self::V, b: Option<&Self::V>) -> Result<Self::V> {
        Ok(Arc::new(kernels::linear_kernel(x, w, b.map(|b| b.as_ref()))?))
    }

    fn matmul(&mut self, a: &Self::V, b: &Self::V, transpose_b: bool) -> Result<Self::V> {
        Ok(Arc::new(kernels::matmul_forward(a, b, transpose_b)?))
    }

    fn add(&mut self, a: &Self::V, b: &Self::V) -> Result<Self::V> {
        Ok(Arc::new(elementwise2("add", a, b, |x, y| x + y)?))
    }

    fn sub(&mut self, a: &Self::V, b: &Self::V) -> Result<Self::V> {
        Ok(Arc::new(elementwise2("sub", a, b, |x, y| x - y)?))
    }

    fn scale(&mut self, a: &Self::V, s: f64) -> Self::V {
        Arc::new(round_out(a.map(|v| v * s)))
    }

    fn relu(&mut self, a: &Self::V) -> Self::V {
        Arc::new(a.map(|v| v.max(0.0)))
    }

    fn softplus(&mut self, a: &Self::V) -> Self::V {
        Arc::new(round_out(a.map(kernels::softplus)))
    }

    fn abs(&mut self, a: &Self::V) -> Self::V {
        Arc::new(a.map(f64::abs))
    }

    fn layer_norm(&mut self, x: &Self::V, g: &Self::V, b: &Self::V, eps: f64) -> Result<Self::V> {
        Ok(Arc::new(kernels::layer_norm_kernel(x, g, b, eps)?))
    }

    fn masked_softmax(&mut self, x: &Self::V, mask: &Mask) -> Result<Self::V> {
        Ok(Arc::new(kernels::masked_softmax_kernel(x, mask)?))
    }

    fn gather_rows(&mut self, x: &Self::V, idx: &[usize]) -> Result<Self::V> {
        Ok(Arc::new(kernels::gather_rows_forward(x, idx)?))
    }

    fn segment_max(&mut self, x: &Self::V, offsets: &[usize]) -> Result<Self::V> {
        Ok(Arc::new(kernels::segment_max_forward(x, offsets)?.0))
    }

    fn concat_cols(&mut self, parts: &[Self::V]) -> Result<Self::V> {
        let refs: Vec<&Tensor> = parts.iter().map(|p| p.as_ref()).collect();
        Ok(Arc::new(kernels::concat_cols_forward(&refs)?))
    }

    fn concat_rows(&mut self, parts: &[Self::V]) -> Result<Self::V> {
        let refs: Vec<&Tensor> = parts.iter().map(|p| p.as_ref()).collect();
        Ok(Arc::new(kernels::concat_rows_forward(&refs)?))
    }

    fn slice_cols(&mut self, x: &Self::V, start: usize, end: usize) -> Result<Self::V> {
        Ok(Arc::new(kernels::slice_cols_forward(x, start, end)?))
    }

    fn row_scale(&mut self, x: &Self::V, factors: &[f64]) -> Result<Self::V> {
        Ok(Arc::new(row_scale_kernel(x, factors)?))
    }

    fn sum(&mut self, x: &Self::V) -> Self::V {
        Arc::new(Tensor::scalar(x.sum()))
    }

    fn cross_entropy(&mut self, logits: &Self::V, targets: &[usize], weights: &[f64]) -> Result<Self::V> {
        let (loss, _) = kernels::cross_entropy_forward(logits, targets, weights)?;
        Ok(Arc::new(Tensor::scalar(loss)))
    }
}

/// Handle to a node recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Op {
    Leaf,
    Param,
    Linear { x: Var, w: Var, b: Option<Var> },
    MatMul { a: Var, b: Var, transpose_b: bool },
    Add(Var, Var),
    Sub(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Softplus(Var),
    Abs(Var),
    LayerNorm { x: Var, gamma: Var, cache: LayerNormCache, beta: Var },
    MaskedSoftmax { x: Var, mask: Mask },
    Gather { x: Var, idx: Vec<usize> },
    SegmentMax { x: Var, arg: Vec<usize> },
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols { x: Var, start: usize },
    RowScale { x: Var, factors: Vec<f64> },
    Sum(Var),
    CrossEntropy { logits: Var, targets: Vec<usize>, weights: Vec<f64>, probs: Tensor },
}

struct Node {
    value: Arc<Tensor>,
    op: Op,
}

/// Recording backend for reverse-mode differentiation.
pub struct Tape<'w> {
    weights: &'w ParamStore,
    nodes: Vec<Node>,
    params: HashMap<String, Var>,
}

/// Gradients produced by [`Tape::backward`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    params: BTreeMap<String, Var>,
}

impl Gradients {
    pub fn of(&self, v: Var) -> Option<&Tensor> {
        self.grads[v.0].as_ref()
    }

    /// Gradient for every parameter touched by the forward pass.
    pub fn params(&self) -> BTreeMap<String, Tensor> {
        self.params
            .iter()
            .filter_map(|(n, v)| self.grads[v.0].clone().map(|g| (n.clone(), g)))
            .collect()
    }
}

impl<'w> Tape<'w> {
    pub fn new(weights: &'w ParamStore) -> Self {
        Self { weights, nodes: Vec::new(), params: HashMap::new() }
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value: Arc::new(value), op });
        Var(self.nodes.len() - 1)
    }

    fn val(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Reverse sweep from a scalar output.
    pub fn backward(&self, out: Var) -> Gradients {
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[out.0] = Some(Tensor::filled(self.val(out).shape(), 1.0));
        for i in (0..=out.0).rev() {
            let Some(dy) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Leaf | Op::Param => {}
                Op::Linear { x, w, b } => {
                    let (dx, dw, db) =
                        kernels::linear_backward(self.val(*x), self.val(*w), b.is_some(), &dy);
                    accumulate(&mut grads, *x, dx);
                    accumulate(&mut grads, *w, dw);
                    if let (Some(b), Some(db)) = (b, db) {
                        let shape = self.val(*b).shape().to_vec();
                        accumulate(&mut grads, *b, db.reshape(shape).unwrap());
                    }
                }
                Op::MatMul { a, b, transpose_b } => {
                    let (da, db) =
                        kernels::matmul_backward(self.val(*a), self.val(*b), *transpose_b, &dy);
                    accumulate(&mut grads, *a, da);
                    accumulate(&mut grads, *b, db);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, dy.clone());
                    accumulate(&mut grads, *b, dy.clone());
                }
                Op::Sub(a, b) => {
                    accumulate(&mut grads, *a, dy.clone());
                    accumulate(&mut grads, *b, dy.map(|v| -v));
                }
                Op::Scale(a, s) => accumulate(&mut grads, *a, dy.map(|v| v * s)),
                Op::Relu(a) => {
                    let x = self.val(*a);
                    let d = zip_map(&dy, x, |g, v| if v > 0.0 { g } else { 0.0 });
                    accumulate(&mut grads, *a, d);
                }
                Op::Softplus(a) => {
                    let x = self.val(*a);
                    let d = zip_map(&dy, x, |g, v| g * kernels::sigmoid(v));
                    accumulate(&mut grads, *a, d);
                }
                Op::Abs(a) => {
                    let x = self.val(*a);
                    let d = zip_map(&dy, x, |g, v| g * v.signum() * f64::from(v != 0.0));
                    accumulate(&mut grads, *a, d);
                }
                Op::LayerNorm { x, gamma, beta, cache } => {
                    let (dx, dg, db) = kernels::layer_norm_backward(cache, self.val(*gamma), &dy);
                    accumulate(&mut grads, *x, dx);
                    let gs = self.val(*gamma).shape().to_vec();
                    let bs = self.val(*beta).shape().to_vec();
                    accumulate(&mut grads, *gamma, dg.reshape(gs).unwrap());
                    accumulate(&mut grads, *beta, db.reshape(bs).unwrap());
                }
                Op::MaskedSoftmax { x, mask } => {
                    let d = kernels::masked_softmax_backward(&node.value, mask, &dy);
                    accumulate(&mut grads, *x, d);
                }
                Op::Gather { x, idx } => {
                    let d = kernels::scatter_rows(&dy, idx, self.val(*x).rows());
                    accumulate(&mut grads, *x, d);
                }
                Op::SegmentMax { x, arg } => {
                    let d = kernels::segment_max_backward(&dy, arg, self.val(*x).rows());
                    accumulate(&mut grads, *x, d);
                }
                Op::ConcatCols(parts) => {
                    let mut start = 0;
                    for p in parts {
                        let w = self.val(*p).cols();
                        let d = kernels::slice_cols_forward(&dy, start, start + w).unwrap();
                        accumulate(&mut grads, *p, d);
                        start += w;
                    }
                }
                Op::ConcatRows(parts) => {
                    let c = dy.cols();
                    let mut start = 0;
                    for p in parts {
                        let r = self.val(*p).rows();
                        let d = Tensor::matrix(r, c, dy.data()[start * c..(start + r) * c].to_vec())
                            .unwrap();
                        accumulate(&mut grads, *p, d);
                        start += r;
                    }
                }
                Op::SliceCols { x, start } => {
                    let xv = self.val(*x);
                    let mut d = Tensor::zeros(&[xv.rows(), xv.cols()]);
                    let w = dy.cols();
                    for r in 0..dy.rows() {
                        d.row_mut(r)[*start..*start + w].copy_from_slice(dy.row(r));
                    }
                    accumulate(&mut grads, *x, d);
                }
                Op::RowScale { x, factors } => {
                    let mut d = dy.clone();
                    for (r, f) in factors.iter().enumerate() {
                        for v in d.row_mut(r) {
                            *v *= f;
                        }
                    }
                    accumulate(&mut grads, *x, d);
                }
                Op::Sum(a) => {
                    let g = dy.scalar_value();
                    accumulate(&mut grads, *a, Tensor::filled(self.val(*a).shape(), g));
                }
                Op::CrossEntropy { logits, targets, weights, probs } => {
                    let d = kernels::cross_entropy_backward(probs, targets, weights, dy.scalar_value());
                    accumulate(&mut grads, *logits, d);
                }
            }
            grads[i] = Some(dy);
        }
        Gradients { grads, params: self.params.iter().map(|(k, v)| (k.clone(), *v)).collect() }
    }
}

fn zip_map(dy: &Tensor, x: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = dy.data().iter().zip(x.data()).map(|(g, v)| f(*g, *v)).collect();
    Tensor::new(dy.shape().to_vec(), data).unwrap()
}

fn accumulate(grads: &mut [Option<Tensor>], v: Var, d: Tensor) {
    match &mut grads[v.0] {
        Some(g) => {
            for (a, b) in g.data_mut().iter_mut().zip(d.data()) {
                *a += b;
            }
        }
        slot @ None => *slot = Some(d),
    }
}

impl Ops for Tape<'_> {
    type V = Var;

    fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf)
    }

    fn param(&mut self, name: &str) -> Result<Var> {
        if let Some(v) = self.params.get(name) {
            return Ok(*v);
        }
        let t = self.weights.get(name)?.clone();
        self.nodes.push(Node { value: t, op: Op::Param });
        let v = Var(self.nodes.len() - 1);
        self.params.insert(name.to_string(), v);
        Ok(v)
    }

    fn value<'a>(&'a self, v: &'a Var) -> &'a Tensor {
        self.val(*v)
    }

    fn linear(&mut self, x: &Var, w: &Var, b: Option<&Var>) -> Result<Var> {
        let y = kernels::linear_kernel(self.val(*x), self.val(*w), b.map(|b| self.val(*b)))?;
        Ok(self.push(y, Op::Linear { x: *x, w: *w, b: b.copied() }))
    }

    fn matmul(&mut self, a: &Var, b: &Var, transpose_b: bool) -> Result<Var> {
        let y = kernels::matmul_forward(self.val(*a), self.val(*b), transpose_b)?;
        Ok(self.push(y, Op::MatMul { a: *a, b: *b, transpose_b }))
    }

    fn add(&mut self, a: &Var, b: &Var) -> Result<Var> {
        let y = elementwise2("add", self.val(*a), self.val(*b), |x, y| x + y)?;
        Ok(self.push(y, Op::Add(*a, *b)))
    }

    fn sub(&mut self, a: &Var, b: &Var) -> Result<Var> {
        let y = elementwise2("sub", self.val(*a), self.val(*b), |x, y| x - y)?;
        Ok(self.push(y, Op::Sub(*a, *b)))
    }

    fn scale(&mut self, a: &Var, s: f64) -> Var {
        let y = round_out(self.val(*a).map(|v| v * s));
        self.push(y, Op::Scale(*a, s))
    }

    fn relu(&mut self, a: &Var) -> Var {
        let y = self.val(*a).map(|v| v.max(0.0));
        self.push(y, Op::Relu(*a))
    }

    fn softplus(&mut self, a: &Var) -> Var {
        let y = round_out(self.val(*a).map(kernels::softplus));
        self.push(y, Op::Softplus(*a))
    }

    fn abs(&mut self, a: &Var) -> Var {
        let y = self.val(*a).map(f64::abs);
        self.push(y, Op::Abs(*a))
    }

    fn layer_norm(&mut self, x: &Var, gamma: &Var, beta: &Var, eps: f64) -> Result<Var> {
        let (y, cache) =
            kernels::layer_norm_forward(self.val(*x), self.val(*gamma), self.val(*beta), eps)?;
        Ok(self.push(y, Op::LayerNorm { x: *x, gamma: *gamma, beta: *beta, cache }))
    }

    fn masked_softmax(&mut self, x: &Var, mask: &Mask) -> Result<Var> {
        let y = kernels::masked_softmax_kernel(self.val(*x), mask)?;
        Ok(self.push(y, Op::MaskedSoftmax { x: *x, mask: mask.clone() }))
    }

    fn gather_rows(&mut self, x: &Var, idx: &[usize]) -> Result<Var> {
        let y = kernels::gather_rows_forward(self.val(*x), idx)?;
        Ok(self.push(y, Op::Gather { x: *x, idx: idx.to_vec() }))
    }

    fn segment_max(&mut self, x: &Var, offsets: &[usize]) -> Result<Var> {
        let (y, arg) = kernels::segment_max_forward(self.val(*x), offsets)?;
        Ok(self.push(y, Op::SegmentMax { x: *x, arg }))
    }

    fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let refs: Vec<&Tensor> = parts.iter().map(|p| self.val(*p)).collect();
        let y = kernels::concat_cols_forward(&refs)?;
        Ok(self.push(y, Op::ConcatCols(parts.to_vec())))
    }

    fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let refs: Vec<&Tensor> = parts.iter().map(|p| self.val(*p)).collect();
        let y = kernels::concat_rows_forward(&refs)?;
        Ok(self.push(y, Op::ConcatRows(parts.to_vec())))
    }

    fn slice_cols(&mut self, x: &Var, start: usize, end: usize) -> Result<Var> {
        let y = kernels::slice_cols_forward(self.val(*x), start, end)?;
        Ok(self.push(y, Op::SliceCols { x: *x, start }))
    }

    fn row_scale(&mut self, x: &Var, factors: &[f64]) -> Result<Var> {
        let y = row_scale_kernel(self.val(*x), factors)?;
        Ok(self.push(y, Op::RowScale { x: *x, factors: factors.to_vec() }))
    }

    fn sum(&mut self, x: &Var) -> Var {
        let s = self.val(*x).sum();
        self.push(Tensor::scalar(s), Op::Sum(*x))
    }

    fn cross_entropy(&mut self, logits: &Var, targets: &[usize], weights: &[f64]) -> Result<Var> {
        let (loss, probs) = kernels::cross_entropy_forward(self.val(*logits), targets, weights)?;
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits: *logits,
                targets: targets.to_vec(),
                weights: weights.to_vec(),
                probs,
            },
        ))
    }
}
