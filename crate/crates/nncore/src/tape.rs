//! Define-by-run computation tape.
//!
//! Nodes are appended in evaluation order, so node indices are already a
//! topological order; the backward pass walks them in reverse exactly once.

use crate::error::{shape_err, NnError, Result};
use crate::kernels;
use crate::param::{ParamId, ParamStore};
use crate::real::Real;
use crate::tensor::Tensor;
use rand::Rng;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// A differentiable operation defined outside this crate.
pub trait CustomOp<T: Real> {
    fn name(&self) -> &str;
    /// Gradients w.r.t. each input given the upstream gradient.
    fn backward(
        &self,
        inputs: &[&Tensor<T>],
        output: &Tensor<T>,
        grad_out: &Tensor<T>,
    ) -> Vec<Option<Tensor<T>>>;
}

/// Probability floor used by [`Tape::cross_entropy`].
pub const PROB_FLOOR: f64 = 1e-12;

enum Op<T: Real> {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    Affine { x: Var, w: Var, b: Var },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Concat(Vec<Var>),
    Slice { x: Var, start: usize },
    Reshape(Var),
    Relu(Var),
    Sigmoid(Var),
    Softplus(Var),
    Softmax(Var),
    Ln { x: Var, floor: T },
    Conv2d { x: Var, w: Var, b: Var, cols: Vec<T> },
    MaxPool { x: Var, argmax: Vec<usize> },
    Dropout { x: Var, mask: Vec<T> },
    Mse(Var, Var),
    CrossEntropy { probs: Var, labels: Vec<usize> },
    Sum(Var),
    Mean(Var),
    LinearMap { x: Var, rows: std::sync::Arc<Vec<Vec<(usize, f64)>>>, d_in: usize },
    Custom { inputs: Vec<Var>, op: Box<dyn CustomOp<T>> },
}

struct Node<T: Real> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Gradients of tracked leaves produced by [`Tape::backward`].
pub struct Grads<T: Real> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Grads<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }
}

pub struct Tape<T: Real = f32> {
    nodes: Vec<Node<T>>,
    grad_enabled: bool,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new(), grad_enabled: true }
    }

    /// A tape that records no gradient state (parameters enter as constants).
    pub fn inference() -> Self {
        Self { nodes: Vec::new(), grad_enabled: false }
    }

    pub fn grad_enabled(&self) -> bool {
        self.grad_enabled
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        self.grad_enabled && vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Constant input.
    pub fn input(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// Input whose gradient is reported in [`Grads`].
    pub fn input_tracked(&mut self, t: Tensor<T>) -> Var {
        let rg = self.grad_enabled;
        self.push(t, Op::Leaf, rg)
    }

    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        let p = store.get(id);
        let rg = self.grad_enabled && p.trainable;
        self.push(p.value.clone(), Op::Param(id), rg)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = kernels::matmul(self.value(a), self.value(b))?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::MatMul(a, b), rg))
    }

    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let out = kernels::affine(self.value(x), self.value(w), self.value(b))?;
        let rg = self.rg(&[x, w, b]);
        Ok(self.push(out, Op::Affine { x, w, b }, rg))
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(shape_err!(
                "{what}: shapes {:?} and {:?} differ",
                self.value(a).shape(),
                self.value(b).shape()
            ));
        }
        Ok(())
    }

    fn zip_map(&self, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Tensor<T> {
        let (ta, tb) = (self.value(a), self.value(b));
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(ta.shape(), data).expect("same shape")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let out = self.zip_map(a, b, |x, y| x + y);
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "sub")?;
        let out = self.zip_map(a, b, |x, y| x - y);
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::Sub(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let out = self.zip_map(a, b, |x, y| x * y);
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, a: Var, s: T) -> Var {
        let out = self.value(a).map(|v| v * s);
        let rg = self.rg(&[a]);
        self.push(out, Op::Scale(a, s), rg)
    }

    /// Concatenation along the last dimension; leading dimensions must agree.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts.first().ok_or_else(|| NnError::Usage("concat of nothing".into()))?;
        let lead = {
            let s = self.value(*first).shape();
            s[..s.len().saturating_sub(1)].to_vec()
        };
        let rows = self.value(*first).rows();
        let mut width = 0;
        for p in parts {
            let s = self.value(*p).shape();
            if s.is_empty() || s[..s.len() - 1] != lead[..] {
                return Err(shape_err!("concat: leading dims {:?} vs {:?}", lead, s));
            }
            width += self.value(*p).last_dim();
        }
        let mut data = Vec::with_capacity(rows * width);
        for r in 0..rows {
            for p in parts {
                data.extend_from_slice(self.value(*p).row(r));
            }
        }
        let mut shape = lead;
        shape.push(width);
        let out = Tensor::new(&shape, data)?;
        let rg = self.rg(parts);
        Ok(self.push(out, Op::Concat(parts.to_vec()), rg))
    }

    /// Columns `start..start + len` of the last dimension.
    pub fn slice(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let t = self.value(x);
        let d = t.last_dim();
        if start + len > d || t.ndim() == 0 {
            return Err(shape_err!("slice {start}..{} out of last dim {d}", start + len));
        }
        let mut data = Vec::with_capacity(t.rows() * len);
        for r in 0..t.rows() {
            data.extend_from_slice(&t.row(r)[start..start + len]);
        }
        let mut shape = t.shape().to_vec();
        *shape.last_mut().unwrap() = len;
        let out = Tensor::new(&shape, data)?;
        let rg = self.rg(&[x]);
        Ok(self.push(out, Op::Slice { x, start }, rg))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).clone().reshape(shape)?;
        let rg = self.rg(&[x]);
        Ok(self.push(out, Op::Reshape(x), rg))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(kernels::relu);
        let rg = self.rg(&[x]);
        self.push(out, Op::Relu(x), rg)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = self.value(x).map(kernels::sigmoid);
        let rg = self.rg(&[x]);
        self.push(out, Op::Sigmoid(x), rg)
    }

    pub fn softplus(&mut self, x: Var) -> Var {
        let out = self.value(x).map(kernels::softplus);
        let rg = self.rg(&[x]);
        self.push(out, Op::Softplus(x), rg)
    }

    /// Softmax over the last dimension.
    pub fn softmax(&mut self, x: Var) -> Var {
        let out = kernels::softmax_rows(self.value(x));
        let rg = self.rg(&[x]);
        self.push(out, Op::Softmax(x), rg)
    }

    /// `ln(max(x, floor))`.
    pub fn ln(&mut self, x: Var, floor: T) -> Var {
        let out = self.value(x).map(|v| if v > floor { v } else { floor }.ln());
        let rg = self.rg(&[x]);
        self.push(out, Op::Ln { x, floor }, rg)
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (out, cols) = kernels::conv2d_forward(self.value(x), self.value(w), self.value(b))?;
        let rg = self.rg(&[x, w, b]);
        let cols = if rg { cols } else { Vec::new() };
        Ok(self.push(out, Op::Conv2d { x, w, b, cols }, rg))
    }

    pub fn maxpool2d(&mut self, x: Var) -> Result<Var> {
        let (out, argmax) = kernels::maxpool2d_forward(self.value(x))?;
        let rg = self.rg(&[x]);
        Ok(self.push(out, Op::MaxPool { x, argmax }, rg))
    }

    /// Inverted dropout: survivors are scaled by `1 / (1 - p)`.
    pub fn dropout<R: Rng + ?Sized>(&mut self, x: Var, p: f64, training: bool, rng: &mut R) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(NnError::Config(format!("dropout rate must lie in [0, 1), got {p}")));
        }
        if !training || p == 0.0 {
            return Ok(x);
        }
        let keep = T::of(1.0 / (1.0 - p));
        let mask: Vec<T> = (0..self.value(x).numel())
            .map(|_| if rng.random::<f64>() < p { T::zero() } else { keep })
            .collect();
        let t = self.value(x);
        let data = t.data().iter().zip(&mask).map(|(&v, &m)| v * m).collect();
        let out = Tensor::new(t.shape(), data)?;
        let rg = self.rg(&[x]);
        Ok(self.push(out, Op::Dropout { x, mask }, rg))
    }

    /// Mean of squared elementwise differences.
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mse")?;
        let (ta, tb) = (self.value(a), self.value(b));
        let n = ta.numel().max(1) as f64;
        let s: f64 = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(&x, &y)| {
                let d = (x - y).f64();
                d * d
            })
            .sum();
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor::scalar(T::of(s / n)), Op::Mse(a, b), rg))
    }

    /// Mean negative log-probability of the labelled class; `probs` is `[B x n]`.
    pub fn cross_entropy(&mut self, probs: Var, labels: &[usize]) -> Result<Var> {
        let p = self.value(probs);
        let n = p.last_dim();
        if p.ndim() != 2 || p.rows() != labels.len() {
            return Err(shape_err!("cross entropy: probs {:?} vs {} labels", p.shape(), labels.len()));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= n) {
            return Err(NnError::Data(format!("label {bad} out of range for {n} classes")));
        }
        let b = labels.len().max(1) as f64;
        let s: f64 = labels
            .iter()
            .enumerate()
            .map(|(i, &y)| -p.row(i)[y].f64().max(PROB_FLOOR).ln())
            .sum();
        let rg = self.rg(&[probs]);
        Ok(self.push(Tensor::scalar(T::of(s / b)), Op::CrossEntropy { probs, labels: labels.to_vec() }, rg))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).sum_f64();
        let rg = self.rg(&[x]);
        self.push(Tensor::scalar(T::of(s)), Op::Sum(x), rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let s = t.sum_f64() / t.numel().max(1) as f64;
        let rg = self.rg(&[x]);
        self.push(Tensor::scalar(T::of(s)), Op::Mean(x), rg)
    }

    /// Fixed sparse linear map applied to each row: output column `j` is
    /// `sum(w * x[i] for (i, w) in rows[j])`.
    pub fn linear_map(&mut self, x: Var, rows: std::sync::Arc<Vec<Vec<(usize, f64)>>>) -> Result<Var> {
        let t = self.value(x);
        let d_in = t.last_dim();
        if rows.iter().flatten().any(|&(i, _)| i >= d_in) {
            return Err(shape_err!("linear map indexes past input width {d_in}"));
        }
        let mut data = Vec::with_capacity(t.rows() * rows.len());
        for r in 0..t.rows() {
            let src = t.row(r);
            for terms in rows.iter() {
                let v: f64 = terms.iter().map(|&(i, w)| src[i].f64() * w).sum();
                data.push(T::of(v));
            }
        }
        let mut shape = t.shape().to_vec();
        if shape.is_empty() {
            return Err(shape_err!("linear map on a scalar"));
        }
        *shape.last_mut().unwrap() = rows.len();
        let out = Tensor::new(&shape, data)?;
        let rg = self.rg(&[x]);
        Ok(self.push(out, Op::LinearMap { x, rows, d_in }, rg))
    }

    pub fn custom(&mut self, inputs: &[Var], output: Tensor<T>, op: Box<dyn CustomOp<T>>) -> Var {
        let rg = self.rg(inputs);
        self.push(output, Op::Custom { inputs: inputs.to_vec(), op }, rg)
    }

    /// Reverse pass from a scalar `loss`. Parameter gradients are added to
    /// `store` (so repeated calls accumulate); tracked-leaf gradients are returned.
    pub fn backward(&self, loss: Var, store: &mut ParamStore<T>) -> Result<Grads<T>> {
        if self.value(loss).numel() != 1 {
            return Err(NnError::Usage(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        if !self.nodes[loss.0].requires_grad {
            return Ok(Grads { grads });
        }
        grads[loss.0] = Some(Tensor::full(self.value(loss).shape(), T::one()));

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let g = match &node.op {
                Op::Leaf => continue,
                _ => match grads[i].take() {
                    Some(g) => g,
                    None => continue,
                },
            };
            if let Op::Param(id) = node.op {
                store.accumulate(id, g.data());
                grads[i] = Some(g);
                continue;
            }
            for (var, gi) in self.local_grads(node, &g)? {
                if !self.nodes[var.0].requires_grad {
                    continue;
                }
                match &mut grads[var.0] {
                    Some(acc) => acc.add_assign_slice(gi.data()),
                    slot @ None => *slot = Some(gi),
                }
            }
        }
        Ok(Grads { grads })
    }

    fn local_grads(&self, node: &Node<T>, g: &Tensor<T>) -> Result<Vec<(Var, Tensor<T>)>> {
        let val = |v: Var| self.value(v);
        let like = |v: Var, data: Vec<T>| Tensor::new(self.value(v).shape(), data).expect("grad shape");
        let gd = g.data();
        let out = match &node.op {
            Op::Leaf | Op::Param(_) => vec![],
            Op::MatMul(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                let (p, q, r) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
                let mut ga = vec![T::zero(); p * q];
                T::gemm(false, true, p, q, r, T::one(), gd, tb.data(), T::zero(), &mut ga);
                let mut gb = vec![T::zero(); q * r];
                T::gemm(true, false, q, r, p, T::one(), ta.data(), gd, T::zero(), &mut gb);
                vec![(*a, like(*a, ga)), (*b, like(*b, gb))]
            }
            Op::Affine { x, w, b } => {
                let (tx, tw) = (val(*x), val(*w));
                let (d_in, d_out) = (tw.shape()[0], tw.shape()[1]);
                let rows = tx.rows();
                let mut res = Vec::with_capacity(3);
                if self.nodes[x.0].requires_grad {
                    let mut gx = vec![T::zero(); rows * d_in];
                    T::gemm(false, true, rows, d_in, d_out, T::one(), gd, tw.data(), T::zero(), &mut gx);
                    res.push((*x, like(*x, gx)));
                }
                if self.nodes[w.0].requires_grad {
                    let mut gw = vec![T::zero(); d_in * d_out];
                    T::gemm(true, false, d_in, d_out, rows, T::one(), tx.data(), gd, T::zero(), &mut gw);
                    res.push((*w, like(*w, gw)));
                }
                if self.nodes[b.0].requires_grad {
                    let mut gb = vec![0.0f64; d_out];
                    for r in 0..rows {
                        for (acc, &v) in gb.iter_mut().zip(&gd[r * d_out..(r + 1) * d_out]) {
                            *acc += v.f64();
                        }
                    }
                    res.push((*b, like(*b, gb.into_iter().map(T::of).collect())));
                }
                res
            }
            Op::Add(a, b) => vec![(*a, g.clone()), (*b, g.clone())],
            Op::Sub(a, b) => vec![(*a, g.clone()), (*b, g.map(|v| -v))],
            Op::Mul(a, b) => {
                let ga = gd.iter().zip(val(*b).data()).map(|(&x, &y)| x * y).collect();
                let gb = gd.iter().zip(val(*a).data()).map(|(&x, &y)| x * y).collect();
                vec![(*a, like(*a, ga)), (*b, like(*b, gb))]
            }
            Op::Scale(a, s) => vec![(*a, g.map(|v| v * *s))],
            Op::Concat(parts) => {
                let rows = g.rows();
                let width = g.last_dim();
                let mut offset = 0;
                let mut res = Vec::with_capacity(parts.len());
                for p in parts {
                    let d = val(*p).last_dim();
                    let mut gp = Vec::with_capacity(rows * d);
                    for r in 0..rows {
                        gp.extend_from_slice(&gd[r * width + offset..r * width + offset + d]);
                    }
                    offset += d;
                    res.push((*p, like(*p, gp)));
                }
                res
            }
            Op::Slice { x, start } => {
                let tx = val(*x);
                let (d, len) = (tx.last_dim(), g.last_dim());
                let mut gx = vec![T::zero(); tx.numel()];
                for r in 0..tx.rows() {
                    gx[r * d + start..r * d + start + len].copy_from_slice(&gd[r * len..(r + 1) * len]);
                }
                vec![(*x, like(*x, gx))]
            }
            Op::Reshape(x) => vec![(*x, like(*x, gd.to_vec()))],
            Op::Relu(x) => {
                let gx = gd
                    .iter()
                    .zip(val(*x).data())
                    .map(|(&gv, &xv)| if xv > T::zero() { gv } else { T::zero() })
                    .collect();
                vec![(*x, like(*x, gx))]
            }
            Op::Sigmoid(x) => {
                let gx = gd
                    .iter()
                    .zip(node.value.data())
                    .map(|(&gv, &y)| gv * y * (T::one() - y))
                    .collect();
                vec![(*x, like(*x, gx))]
            }
            Op::Softplus(x) => {
                let gx = gd
                    .iter()
                    .zip(val(*x).data())
                    .map(|(&gv, &xv)| gv * kernels::sigmoid(xv))
                    .collect();
                vec![(*x, like(*x, gx))]
            }
            Op::Softmax(x) => {
                let d = node.value.last_dim();
                let y = node.value.data();
                let mut gx = vec![T::zero(); y.len()];
                for r in 0..node.value.rows() {
                    let yr = &y[r * d..(r + 1) * d];
                    let gr = &gd[r * d..(r + 1) * d];
                    let dot: f64 = yr.iter().zip(gr).map(|(&a, &b)| (a * b).f64()).sum();
                    let dot = T::of(dot);
                    for j in 0..d {
                        gx[r * d + j] = yr[j] * (gr[j] - dot);
                    }
                }
                vec![(*x, like(*x, gx))]
            }
            Op::Ln { x, floor } => {
                let gx = gd
                    .iter()
                    .zip(val(*x).data())
                    .map(|(&gv, &xv)| if xv > *floor { gv / xv } else { T::zero() })
                    .collect();
                vec![(*x, like(*x, gx))]
            }
            Op::Conv2d { x, w, b, cols } => {
                let need_x = self.nodes[x.0].requires_grad;
                let (dx, dw, db) = kernels::conv2d_backward(gd, cols, val(*w), val(*x).shape(), need_x)?;
                let mut res = vec![(*w, like(*w, dw)), (*b, like(*b, db))];
                if let Some(dx) = dx {
                    res.push((*x, like(*x, dx)));
                }
                res
            }
            Op::MaxPool { x, argmax } => {
                let dx = kernels::maxpool2d_backward(gd, argmax, val(*x).numel());
                vec![(*x, like(*x, dx))]
            }
            Op::Dropout { x, mask } => {
                let gx = gd.iter().zip(mask).map(|(&gv, &m)| gv * m).collect();
                vec![(*x, like(*x, gx))]
            }
            Op::Mse(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                let scale = gd[0] * T::of(2.0 / ta.numel().max(1) as f64);
                let ga: Vec<T> = ta.data().iter().zip(tb.data()).map(|(&x, &y)| (x - y) * scale).collect();
                let gb = ga.iter().map(|&v| -v).collect();
                vec![(*a, like(*a, ga)), (*b, like(*b, gb))]
            }
            Op::CrossEntropy { probs, labels } => {
                let p = val(*probs);
                let n = p.last_dim();
                let scale = gd[0].f64() / labels.len().max(1) as f64;
                let mut gp = vec![T::zero(); p.numel()];
                for (i, &y) in labels.iter().enumerate() {
                    let pv = p.row(i)[y].f64();
                    if pv > PROB_FLOOR {
                        gp[i * n + y] = T::of(-scale / pv);
                    }
                }
                vec![(*probs, like(*probs, gp))]
            }
            Op::Sum(x) => vec![(*x, Tensor::full(val(*x).shape(), gd[0]))],
            Op::Mean(x) => {
                let n = val(*x).numel().max(1) as f64;
                vec![(*x, Tensor::full(val(*x).shape(), T::of(gd[0].f64() / n)))]
            }
            Op::LinearMap { x, rows, d_in } => {
                let d_out = rows.len();
                let n_rows = val(*x).rows();
                let mut gx = vec![0.0f64; n_rows * d_in];
                for r in 0..n_rows {
                    for (j, terms) in rows.iter().enumerate() {
                        let gj = gd[r * d_out + j].f64();
                        for &(i, w) in terms {
                            gx[r * d_in + i] += w * gj;
                        }
                    }
                }
                vec![(*x, like(*x, gx.into_iter().map(T::of).collect()))]
            }
            Op::Custom { inputs, op } => {
                let ins: Vec<&Tensor<T>> = inputs.iter().map(|v| val(*v)).collect();
                let gs = op.backward(&ins, &node.value, g);
                if gs.len() != inputs.len() {
                    return Err(NnError::Usage(format!(
                        "custom op {} returned {} grads for {} inputs",
                        op.name(),
                        gs.len(),
                        inputs.len()
                    )));
                }
                inputs.iter().zip(gs).filter_map(|(v, gi)| gi.map(|t| (*v, t))).collect()
            }
        };
        Ok(out)
    }
}
