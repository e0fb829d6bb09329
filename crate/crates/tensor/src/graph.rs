//! Tape-based reverse-mode differentiation.
//!
//! A [`Graph`] records every operation as a node holding its output value and
//! whatever the backward rule needs. Nodes are appended in evaluation order, so
//! the node list is already topologically sorted and [`Graph::backward`] walks
//! it once in reverse.

use std::cell::{Ref, RefCell};

use crate::error::{shape_err, Result, TensorError};
use crate::kernels::broadcast::{aligned_strides, broadcast_shape, for_each_broadcast};
use crate::kernels::conv::{self, ConvGeom};
use crate::kernels::layout::{self, MatmulGeom};
use crate::kernels::norm::{self, LayerNormSaved};
use crate::kernels::pool::{self, PoolGeom};
use crate::kernels::resize;
use crate::scalar::Scalar;
use crate::tensor::{numel, Tensor};

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Binary {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Unary {
    Relu,
    Sigmoid,
    Gelu,
    Softplus,
    Abs,
    Exp,
}

enum Op<T> {
    Leaf,
    Binary(Binary, Var, Var),
    Unary(Unary, Var),
    AddScalar(Var),
    Scale(Var, T),
    MatMul(Var, Var, MatmulGeom),
    Conv2d { x: Var, w: Var, b: Option<Var>, geom: ConvGeom },
    Softmax(Var),
    LayerNorm { x: Var, gamma: Var, beta: Var, saved: LayerNormSaved<T> },
    Concat { inputs: Vec<Var>, axis: usize },
    Resize { x: Var, planes: usize, h: usize, w: usize },
    /// Any max-style selection: backward scatters into the recorded indices.
    Gather { x: Var, index: Vec<usize> },
    AvgPool { x: Var, geom: PoolGeom },
    SumAxis { x: Var, axis: usize, scale: T },
    Reshape(Var),
    Permute(Var, Vec<usize>),
    Sum(Var, T),
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
    grad: Option<Tensor<T>>,
}

/// Recorded computation. Confined to one thread; independent graphs may run
/// concurrently.
pub struct Graph<T: Scalar> {
    nodes: RefCell<Vec<Node<T>>>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn sigmoid<T: Scalar>(v: T) -> T {
    if v >= T::zero() {
        (T::one() + (-v).exp()).recip()
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

fn softplus<T: Scalar>(v: T) -> T {
    v.max(T::zero()) + (-v.abs()).exp().ln_1p()
}

fn gelu<T: Scalar>(v: T) -> T {
    let half = T::from_f64(0.5);
    half * v * (T::one() + (v * T::from_f64(std::f64::consts::FRAC_1_SQRT_2)).erf())
}

fn gelu_grad<T: Scalar>(v: T) -> T {
    let half = T::from_f64(0.5);
    let cdf = half * (T::one() + (v * T::from_f64(std::f64::consts::FRAC_1_SQRT_2)).erf());
    let pdf = (-half * v * v).exp() * T::from_f64(1.0 / (2.0 * std::f64::consts::PI).sqrt());
    cdf + v * pdf
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: RefCell::new(Vec::new()) }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Tensor<T>, op: Op<T>, needs_grad: bool) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { value, op, needs_grad, grad: None });
        Var(nodes.len() - 1)
    }

    fn needs(&self, vars: &[Var]) -> bool {
        let nodes = self.nodes.borrow();
        vars.iter().any(|v| nodes[v.0].needs_grad)
    }

    /// Input tensor. Gradients are accumulated into it when `requires_grad`.
    pub fn leaf(&self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn param(&self, value: Tensor<T>) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> Ref<'_, Tensor<T>> {
        Ref::map(self.nodes.borrow(), |n| &n[v.0].value)
    }

    pub fn shape(&self, v: Var) -> Vec<usize> {
        self.nodes.borrow()[v.0].value.shape().to_vec()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes.borrow()[v.0].needs_grad
    }

    /// Accumulated gradient of a leaf after [`Graph::backward`].
    pub fn grad(&self, v: Var) -> Option<Tensor<T>> {
        self.nodes.borrow()[v.0].grad.clone()
    }

    pub fn zero_grad(&self) {
        for node in self.nodes.borrow_mut().iter_mut() {
            node.grad = None;
        }
    }

    // ----- elementwise -----

    fn binary(&self, kind: Binary, a: Var, b: Var, name: &'static str) -> Result<Var> {
        let value = {
            let (ta, tb) = (self.value(a), self.value(b));
            let out = broadcast_shape(ta.shape(), tb.shape())
                .ok_or_else(|| shape_err(name, format!("{:?} vs {:?}", ta.shape(), tb.shape())))?;
            let f = |x: T, y: T| match kind {
                Binary::Add => x + y,
                Binary::Sub => x - y,
                Binary::Mul => x * y,
                Binary::Div => x / y,
            };
            let data = if ta.shape() == tb.shape() {
                ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect()
            } else {
                let (sa, sb) = (aligned_strides(ta.shape(), &out), aligned_strides(tb.shape(), &out));
                let mut data = vec![T::zero(); numel(&out)];
                let (da, db) = (ta.data(), tb.data());
                for_each_broadcast(&out, &sa, &sb, |o, ia, ib| data[o] = f(da[ia], db[ib]));
                data
            };
            Tensor::from_parts(out, data)
        };
        Ok(self.push(value, Op::Binary(kind, a, b), self.needs(&[a, b])))
    }

    pub fn add(&self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Add, a, b, "add")
    }

    pub fn sub(&self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Sub, a, b, "sub")
    }

    pub fn mul(&self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Mul, a, b, "mul")
    }

    pub fn div(&self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Div, a, b, "div")
    }

    fn unary(&self, kind: Unary, a: Var) -> Var {
        let value = self.value(a).map(|v| match kind {
            Unary::Relu => v.max(T::zero()),
            Unary::Sigmoid => sigmoid(v),
            Unary::Gelu => gelu(v),
            Unary::Softplus => softplus(v),
            Unary::Abs => v.abs(),
            Unary::Exp => v.exp(),
        });
        self.push(value, Op::Unary(kind, a), self.needs(&[a]))
    }

    pub fn relu(&self, a: Var) -> Var {
        self.unary(Unary::Relu, a)
    }

    pub fn sigmoid(&self, a: Var) -> Var {
        self.unary(Unary::Sigmoid, a)
    }

    /// Exact (erf-based) GELU.
    pub fn gelu(&self, a: Var) -> Var {
        self.unary(Unary::Gelu, a)
    }

    /// `ln(1 + e^x)`, evaluated without overflow.
    pub fn softplus(&self, a: Var) -> Var {
        self.unary(Unary::Softplus, a)
    }

    pub fn abs(&self, a: Var) -> Var {
        self.unary(Unary::Abs, a)
    }

    pub fn exp(&self, a: Var) -> Var {
        self.unary(Unary::Exp, a)
    }

    pub fn add_scalar(&self, a: Var, c: f64) -> Var {
        let c = T::from_f64(c);
        let value = self.value(a).map(|v| v + c);
        self.push(value, Op::AddScalar(a), self.needs(&[a]))
    }

    pub fn scale(&self, a: Var, c: f64) -> Var {
        let c = T::from_f64(c);
        let value = self.value(a).map(|v| v * c);
        self.push(value, Op::Scale(a, c), self.needs(&[a]))
    }

    // ----- linear algebra -----

    /// Product over the trailing two axes. `b` is either batched like `a` or 2-D.
    pub fn matmul(&self, a: Var, b: Var) -> Result<Var> {
        let value = {
            let (ta, tb) = (self.value(a), self.value(b));
            let (geom, out) = MatmulGeom::new(ta.shape(), tb.shape())
                .ok_or_else(|| shape_err("matmul", format!("{:?} x {:?}", ta.shape(), tb.shape())))?;
            let data = layout::matmul(ta.data(), tb.data(), &geom);
            (Tensor::from_parts(out, data), geom)
        };
        Ok(self.push(value.0, Op::MatMul(a, b, value.1), self.needs(&[a, b])))
    }

    /// `x · w + b` over the last axis of `x`, with `w: [in, out]`, `b: [out]`.
    pub fn linear(&self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let xs = self.shape(x);
        if xs.is_empty() {
            return Err(shape_err("linear", "input must have rank ≥ 1"));
        }
        let ws = self.shape(w);
        let rows = numel(&xs[..xs.len() - 1]);
        let flat = self.reshape(x, &[rows, xs[xs.len() - 1]])?;
        let y = self.matmul(flat, w)?;
        let y = match b {
            Some(b) => self.add(y, b)?,
            None => y,
        };
        let mut out = xs[..xs.len() - 1].to_vec();
        out.push(ws[1]);
        self.reshape(y, &out)
    }

    /// 2-D convolution, NCHW input, OIHW kernel, optional per-output-channel bias.
    pub fn conv2d(&self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize) -> Result<Var> {
        let (value, geom) = {
            let (tx, tw) = (self.value(x), self.value(w));
            let geom = ConvGeom::new(tx.shape(), tw.shape(), stride, pad).ok_or_else(|| {
                shape_err(
                    "conv2d",
                    format!("input {:?}, kernel {:?}, stride {stride}, pad {pad}", tx.shape(), tw.shape()),
                )
            })?;
            let tb = b.map(|b| self.value(b));
            if let Some(tb) = &tb {
                if tb.shape() != [geom.out_ch] {
                    return Err(shape_err("conv2d", format!("bias {:?} for {} outputs", tb.shape(), geom.out_ch)));
                }
            }
            let data = conv::conv2d_forward(tx.data(), tw.data(), tb.as_ref().map(|t| t.data()), &geom);
            (Tensor::from_parts(geom.out_shape().to_vec(), data), geom)
        };
        let mut deps = vec![x, w];
        deps.extend(b);
        Ok(self.push(value, Op::Conv2d { x, w, b, geom }, self.needs(&deps)))
    }

    // ----- normalization -----

    pub fn softmax(&self, a: Var) -> Result<Var> {
        let value = {
            let t = self.value(a);
            let row = *t.shape().last().ok_or_else(|| shape_err("softmax", "rank-0 input"))?;
            Tensor::from_parts(t.shape().to_vec(), norm::softmax_rows(t.data(), row))
        };
        Ok(self.push(value, Op::Softmax(a), self.needs(&[a])))
    }

    /// Layer normalization over the last axis (biased variance).
    pub fn layer_norm(&self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let (value, saved) = {
            let (tx, tg, tb) = (self.value(x), self.value(gamma), self.value(beta));
            let row = *tx.shape().last().ok_or_else(|| shape_err("layer_norm", "rank-0 input"))?;
            if tg.shape() != [row] || tb.shape() != [row] {
                return Err(shape_err(
                    "layer_norm",
                    format!("input {:?}, gamma {:?}, beta {:?}", tx.shape(), tg.shape(), tb.shape()),
                ));
            }
            let (y, saved) = norm::layer_norm(tx.data(), tg.data(), tb.data(), T::from_f64(eps));
            (Tensor::from_parts(tx.shape().to_vec(), y), saved)
        };
        Ok(self.push(value, Op::LayerNorm { x, gamma, beta, saved }, self.needs(&[x, gamma, beta])))
    }

    // ----- layout -----

    pub fn concat(&self, inputs: &[Var], axis: usize) -> Result<Var> {
        if inputs.is_empty() {
            return Err(shape_err("concat", "no inputs"));
        }
        let value = {
            let vals: Vec<_> = inputs.iter().map(|&v| self.value(v)).collect();
            let first = vals[0].shape().to_vec();
            if axis >= first.len() {
                return Err(shape_err("concat", format!("axis {axis} for shape {first:?}")));
            }
            let mut out = first.clone();
            out[axis] = 0;
            for t in &vals {
                let s = t.shape();
                let compatible = s.len() == first.len()
                    && s.iter().zip(&first).enumerate().all(|(i, (a, b))| i == axis || a == b);
                if !compatible {
                    let shapes: Vec<_> = vals.iter().map(|t| t.shape().to_vec()).collect();
                    return Err(shape_err("concat", format!("axis {axis}, shapes {shapes:?}")));
                }
                out[axis] += s[axis];
            }
            let parts: Vec<(&[T], &[usize])> = vals.iter().map(|t| (t.data(), t.shape())).collect();
            Tensor::from_parts(out, layout::concat(&parts, axis))
        };
        Ok(self.push(value, Op::Concat { inputs: inputs.to_vec(), axis }, self.needs(inputs)))
    }

    pub fn reshape(&self, a: Var, shape: &[usize]) -> Result<Var> {
        let value = {
            let t = self.value(a);
            if numel(shape) != t.numel() || shape.contains(&0) {
                return Err(shape_err("reshape", format!("{:?} to {:?}", t.shape(), shape)));
            }
            Tensor::from_parts(shape.to_vec(), t.data().to_vec())
        };
        Ok(self.push(value, Op::Reshape(a), self.needs(&[a])))
    }

    /// Output axis `j` is input axis `perm[j]`.
    pub fn permute(&self, a: Var, perm: &[usize]) -> Result<Var> {
        let value = {
            let t = self.value(a);
            if !layout::is_permutation(perm, t.rank()) {
                return Err(shape_err("permute", format!("{perm:?} for shape {:?}", t.shape())));
            }
            Tensor::from_parts(layout::permuted_shape(t.shape(), perm), layout::permute(t.data(), t.shape(), perm))
        };
        Ok(self.push(value, Op::Permute(a, perm.to_vec()), self.needs(&[a])))
    }

    // ----- spatial resampling and pooling -----

    /// Bilinear resize of an NCHW map (half-pixel centers, align-corners off).
    pub fn resize_bilinear(&self, x: Var, out_h: usize, out_w: usize) -> Result<Var> {
        let (value, planes, h, w) = {
            let t = self.value(x);
            let s = t.shape();
            if s.len() != 4 || out_h == 0 || out_w == 0 {
                return Err(shape_err("resize_bilinear", format!("input {s:?} to {out_h}x{out_w}")));
            }
            let planes = s[0] * s[1];
            let data = resize::bilinear(t.data(), planes, s[2], s[3], out_h, out_w);
            (Tensor::from_parts(vec![s[0], s[1], out_h, out_w], data), planes, s[2], s[3])
        };
        Ok(self.push(value, Op::Resize { x, planes, h, w }, self.needs(&[x])))
    }

    pub fn upsample2x(&self, x: Var) -> Result<Var> {
        let s = self.shape(x);
        if s.len() != 4 {
            return Err(shape_err("upsample2x", format!("input {s:?}")));
        }
        self.resize_bilinear(x, 2 * s[2], 2 * s[3])
    }

    fn pool_geom(&self, x: Var, kernel: usize, stride: usize, pad: usize, name: &'static str) -> Result<PoolGeom> {
        let s = self.shape(x);
        PoolGeom::new(&s, kernel, stride, pad)
            .ok_or_else(|| shape_err(name, format!("input {s:?}, kernel {kernel}, stride {stride}, pad {pad}")))
    }

    pub fn max_pool2d(&self, x: Var, kernel: usize, stride: usize, pad: usize) -> Result<Var> {
        let geom = self.pool_geom(x, kernel, stride, pad, "max_pool2d")?;
        let (value, index) = {
            let t = self.value(x);
            let (data, index) = pool::max_pool(t.data(), &geom);
            let s = t.shape();
            (Tensor::from_parts(vec![s[0], s[1], geom.out_h, geom.out_w], data), index)
        };
        Ok(self.push(value, Op::Gather { x, index }, self.needs(&[x])))
    }

    /// Average pooling; zero padding counts toward the `kernel²` divisor.
    pub fn avg_pool2d(&self, x: Var, kernel: usize, stride: usize, pad: usize) -> Result<Var> {
        let geom = self.pool_geom(x, kernel, stride, pad, "avg_pool2d")?;
        let value = {
            let t = self.value(x);
            let s = t.shape();
            Tensor::from_parts(vec![s[0], s[1], geom.out_h, geom.out_w], pool::avg_pool(t.data(), &geom))
        };
        Ok(self.push(value, Op::AvgPool { x, geom }, self.needs(&[x])))
    }

    /// `[B,C,H,W] → [B,C,1,1]` spatial mean.
    pub fn global_avg_pool(&self, x: Var) -> Result<Var> {
        let s = self.shape(x);
        if s.len() != 4 {
            return Err(shape_err("global_avg_pool", format!("input {s:?}")));
        }
        let flat = self.reshape(x, &[s[0], s[1], s[2] * s[3]])?;
        let m = self.mean_axis(flat, 2)?;
        self.reshape(m, &[s[0], s[1], 1, 1])
    }

    /// `[B,C,H,W] → [B,C,1,1]` spatial max.
    pub fn global_max_pool(&self, x: Var) -> Result<Var> {
        let s = self.shape(x);
        if s.len() != 4 {
            return Err(shape_err("global_max_pool", format!("input {s:?}")));
        }
        let flat = self.reshape(x, &[s[0], s[1], s[2] * s[3]])?;
        let m = self.max_axis(flat, 2)?;
        self.reshape(m, &[s[0], s[1], 1, 1])
    }

    // ----- reductions -----

    fn check_axis(&self, x: Var, axis: usize, name: &'static str) -> Result<Vec<usize>> {
        let s = self.shape(x);
        if axis >= s.len() {
            return Err(shape_err(name, format!("axis {axis} for shape {s:?}")));
        }
        Ok(s)
    }

    fn reduce_axis(&self, x: Var, axis: usize, mean: bool, name: &'static str) -> Result<Var> {
        let s = self.check_axis(x, axis, name)?;
        let scale = if mean { T::from_f64(1.0 / s[axis] as f64) } else { T::one() };
        let value = {
            let t = self.value(x);
            let mut data = layout::sum_axis(t.data(), &s, axis);
            if mean {
                data.iter_mut().for_each(|v| *v *= scale);
            }
            let mut out = s.clone();
            out[axis] = 1;
            Tensor::from_parts(out, data)
        };
        Ok(self.push(value, Op::SumAxis { x, axis, scale }, self.needs(&[x])))
    }

    /// Sum over one axis, keeping it with extent 1.
    pub fn sum_axis(&self, x: Var, axis: usize) -> Result<Var> {
        self.reduce_axis(x, axis, false, "sum_axis")
    }

    /// Mean over one axis, keeping it with extent 1.
    pub fn mean_axis(&self, x: Var, axis: usize) -> Result<Var> {
        self.reduce_axis(x, axis, true, "mean_axis")
    }

    /// Max over one axis, keeping it with extent 1. Ties resolve to the first index.
    pub fn max_axis(&self, x: Var, axis: usize) -> Result<Var> {
        let s = self.check_axis(x, axis, "max_axis")?;
        let (value, index) = {
            let t = self.value(x);
            let (data, index) = layout::max_axis(t.data(), &s, axis);
            let mut out = s.clone();
            out[axis] = 1;
            (Tensor::from_parts(out, data), index)
        };
        Ok(self.push(value, Op::Gather { x, index }, self.needs(&[x])))
    }

    pub fn sum(&self, x: Var) -> Var {
        let value = Tensor::scalar(self.value(x).sum());
        self.push(value, Op::Sum(x, T::one()), self.needs(&[x]))
    }

    pub fn mean(&self, x: Var) -> Var {
        let (value, scale) = {
            let t = self.value(x);
            let scale = T::from_f64(1.0 / t.numel() as f64);
            (Tensor::scalar(t.sum() * scale), scale)
        };
        self.push(value, Op::Sum(x, scale), self.needs(&[x]))
    }

    // ----- backward -----

    /// Reverse-mode sweep from a scalar loss. Leaf gradients accumulate across
    /// calls until [`Graph::zero_grad`].
    pub fn backward(&self, loss: Var) -> Result<()> {
        let mut leaf_grads: Vec<(usize, Tensor<T>)> = Vec::new();
        {
            let nodes = self.nodes.borrow();
            let shape = nodes[loss.0].value.shape();
            if numel(shape) != 1 {
                return Err(TensorError::NonScalarLoss { shape: shape.to_vec() });
            }
            if !nodes[loss.0].needs_grad {
                return Ok(());
            }
            let mut grads: Vec<Option<Tensor<T>>> = (0..=loss.0).map(|_| None).collect();
            grads[loss.0] = Some(Tensor::ones_like(&nodes[loss.0].value));
            for id in (0..=loss.0).rev() {
                let Some(dy) = grads[id].take() else { continue };
                let node = &nodes[id];
                if let Op::Leaf = node.op {
                    leaf_grads.push((id, dy));
                    continue;
                }
                let mut acc = |v: Var, data: Vec<T>| {
                    let n = &nodes[v.0];
                    if !n.needs_grad {
                        return;
                    }
                    match &mut grads[v.0] {
                        Some(g) => g.data_mut().iter_mut().zip(&data).for_each(|(a, &b)| *a += b),
                        slot => *slot = Some(Tensor::from_parts(n.value.shape().to_vec(), data)),
                    }
                };
                backward_node(&nodes, node, &dy, &mut acc);
            }
        }
        let mut nodes = self.nodes.borrow_mut();
        for (id, g) in leaf_grads {
            match &mut nodes[id].grad {
                Some(existing) => existing.add_assign(&g),
                slot => *slot = Some(g),
            }
        }
        Ok(())
    }
}

impl<T: Scalar> Tensor<T> {
    fn ones_like(other: &Tensor<T>) -> Self {
        Tensor::from_parts(other.shape().to_vec(), vec![T::one(); other.numel()])
    }
}

fn backward_node<T: Scalar>(nodes: &[Node<T>], node: &Node<T>, dy: &Tensor<T>, acc: &mut dyn FnMut(Var, Vec<T>)) {
    let val = |v: Var| &nodes[v.0].value;
    let needs = |v: Var| nodes[v.0].needs_grad;
    let g = dy.data();
    match &node.op {
        Op::Leaf => {}
        Op::Binary(kind, a, b) => {
            let (ta, tb) = (val(*a), val(*b));
            let out = node.value.shape();
            let (sa, sb) = (aligned_strides(ta.shape(), out), aligned_strides(tb.shape(), out));
            let (da_, db_) = (ta.data(), tb.data());
            if needs(*a) {
                let mut da = vec![T::zero(); ta.numel()];
                for_each_broadcast(out, &sa, &sb, |o, ia, ib| {
                    da[ia] += match kind {
                        Binary::Add | Binary::Sub => g[o],
                        Binary::Mul => g[o] * db_[ib],
                        Binary::Div => g[o] / db_[ib],
                    }
                });
                acc(*a, da);
            }
            if needs(*b) {
                let mut db = vec![T::zero(); tb.numel()];
                for_each_broadcast(out, &sa, &sb, |o, ia, ib| {
                    db[ib] += match kind {
                        Binary::Add => g[o],
                        Binary::Sub => -g[o],
                        Binary::Mul => g[o] * da_[ia],
                        Binary::Div => -g[o] * da_[ia] / (db_[ib] * db_[ib]),
                    }
                });
                acc(*b, db);
            }
        }
        Op::Unary(kind, a) => {
            let x = val(*a).data();
            let y = node.value.data();
            let d = (0..x.len())
                .map(|i| {
                    g[i] * match kind {
                        Unary::Relu => {
                            if x[i] > T::zero() {
                                T::one()
                            } else {
                                T::zero()
                            }
                        }
                        Unary::Sigmoid => y[i] * (T::one() - y[i]),
                        Unary::Gelu => gelu_grad(x[i]),
                        Unary::Softplus => sigmoid(x[i]),
                        Unary::Abs => {
                            if x[i] > T::zero() {
                                T::one()
                            } else if x[i] < T::zero() {
                                -T::one()
                            } else {
                                T::zero()
                            }
                        }
                        Unary::Exp => y[i],
                    }
                })
                .collect();
            acc(*a, d);
        }
        Op::AddScalar(a) => acc(*a, g.to_vec()),
        Op::Scale(a, c) => acc(*a, g.iter().map(|&v| v * *c).collect()),
        Op::MatMul(a, b, geom) => {
            let (da, db) = layout::matmul_backward(val(*a).data(), val(*b).data(), g, geom, (needs(*a), needs(*b)));
            if let Some(da) = da {
                acc(*a, da);
            }
            if let Some(db) = db {
                acc(*b, db);
            }
        }
        Op::Conv2d { x, w, b, geom } => {
            let need_b = b.is_some_and(needs);
            let grads = conv::conv2d_backward(val(*x).data(), val(*w).data(), g, geom, (needs(*x), needs(*w), need_b));
            if let Some(dx) = grads.dx {
                acc(*x, dx);
            }
            if let Some(dw) = grads.dw {
                acc(*w, dw);
            }
            if let (Some(b), Some(db)) = (b, grads.db) {
                acc(*b, db);
            }
        }
        Op::Softmax(a) => {
            let row = *node.value.shape().last().unwrap();
            acc(*a, norm::softmax_rows_backward(node.value.data(), g, row));
        }
        Op::LayerNorm { x, gamma, beta, saved } => {
            let (dx, dg, db) = norm::layer_norm_backward(saved, val(*gamma).data(), g);
            acc(*x, dx);
            acc(*gamma, dg);
            acc(*beta, db);
        }
        Op::Concat { inputs, axis } => {
            let shapes: Vec<&[usize]> = inputs.iter().map(|&v| val(v).shape()).collect();
            for (v, part) in inputs.iter().zip(layout::split(g, &shapes, *axis)) {
                acc(*v, part);
            }
        }
        Op::Resize { x, planes, h, w } => {
            let s = node.value.shape();
            acc(*x, resize::bilinear_backward(g, *planes, *h, *w, s[2], s[3]));
        }
        Op::Gather { x, index } => {
            let mut dx = vec![T::zero(); val(*x).numel()];
            for (&i, &v) in index.iter().zip(g) {
                dx[i] += v;
            }
            acc(*x, dx);
        }
        Op::AvgPool { x, geom } => acc(*x, pool::avg_pool_backward(g, geom)),
        Op::SumAxis { x, axis, scale } => acc(*x, layout::expand_axis(g, val(*x).shape(), *axis, *scale)),
        Op::Reshape(a) => acc(*a, g.to_vec()),
        Op::Permute(a, perm) => {
            let inv = layout::invert_permutation(perm);
            acc(*a, layout::permute(g, node.value.shape(), &inv));
        }
        Op::Sum(a, scale) => {
            let v = g[0] * *scale;
            acc(*a, vec![v; val(*a).numel()]);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], v: &[f64]) -> Tensor<f64> {
        Tensor::from_f64(shape, v).unwrap()
    }

    #[test]
    fn relu_and_sigmoid_definitions() {
        let g = Graph::<f64>::new();
        let x = g.constant(t(&[3], &[-1.0, 0.0, 2.0]));
        assert_eq!(g.value(g.relu(x)).data(), &[0.0, 0.0, 2.0]);
        let z = g.constant(Tensor::scalar(0.0));
        assert_eq!(g.value(g.sigmoid(z)).item(), 0.5);
    }

    #[test]
    fn conv_of_ones_is_nine() {
        let g = Graph::<f32>::new();
        let x = g.constant(Tensor::ones(&[1, 1, 3, 3]));
        let w = g.constant(Tensor::ones(&[1, 1, 3, 3]));
        let y = g.conv2d(x, w, None, 1, 0).unwrap();
        assert_eq!(g.shape(y), vec![1, 1, 1, 1]);
        assert_eq!(g.value(y).item(), 9.0);
    }

    #[test]
    fn sum_gradient_is_ones() {
        let g = Graph::<f64>::new();
        let x = g.param(t(&[2, 2], &[1.0, -2.0, 3.0, 0.5]));
        let s = g.sum(x);
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap().data(), &[1.0; 4]);
    }

    #[test]
    fn square_gradient_is_two_x() {
        let g = Graph::<f64>::new();
        let x = g.param(t(&[2], &[1.0, 2.0]));
        let sq = g.mul(x, x).unwrap();
        let s = g.sum(sq);
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap().data(), &[2.0, 4.0]);
    }

    #[test]
    fn repeated_backward_accumulates() {
        let g = Graph::<f64>::new();
        let x = g.param(t(&[2], &[1.0, 2.0]));
        let s = g.sum(x);
        g.backward(s).unwrap();
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap().data(), &[2.0, 2.0]);
        g.zero_grad();
        assert!(g.grad(x).is_none());
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let g = Graph::<f64>::new();
        let x = g.param(t(&[2], &[1.0, 2.0]));
        assert!(matches!(g.backward(x), Err(TensorError::NonScalarLoss { .. })));
    }

    #[test]
    fn shape_errors_name_op_and_shapes() {
        let g = Graph::<f32>::new();
        let a = g.constant(Tensor::zeros(&[2, 3]));
        let b = g.constant(Tensor::zeros(&[4]));
        let err = g.add(a, b).unwrap_err().to_string();
        assert!(err.contains("add") && err.contains("[2, 3]") && err.contains("[4]"), "{err}");
        let w = g.constant(Tensor::zeros(&[1, 5, 3, 3]));
        let x = g.constant(Tensor::zeros(&[1, 2, 4, 4]));
        let err = g.conv2d(x, w, None, 1, 1).unwrap_err().to_string();
        assert!(err.contains("conv2d"), "{err}");
    }

    #[test]
    fn max_pool_backward_prefers_first_tie() {
        let g = Graph::<f64>::new();
        let x = g.param(t(&[1, 1, 2, 2], &[1.0, 1.0, 1.0, 1.0]));
        let y = g.max_pool2d(x, 2, 2, 0).unwrap();
        let s = g.sum(y);
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap().data(), &[1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn constants_get_no_gradient() {
        let g = Graph::<f64>::new();
        let c = g.constant(t(&[2], &[1.0, 2.0]));
        let x = g.param(t(&[2], &[3.0, 4.0]));
        let y = g.mul(c, x).unwrap();
        let s = g.sum(y);
        g.backward(s).unwrap();
        assert!(g.grad(c).is_none());
        assert_eq!(g.grad(x).unwrap().data(), &[1.0, 2.0]);
    }
}
