//! Recorded operation tape with reverse-mode gradient accumulation.
//!
//! A [`Graph`] lives for one forward pass. Every operation appends a node holding
//! its value and the information its backward rule needs; [`Graph::backward`]
//! walks the tape in reverse and adds the resulting parameter gradients into the
//! [`ParamStore`] the parameters were read from.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

use super::kernels::{self, LAYER_NORM_EPS};
use super::{ParamStore, Tensor};
use crate::math;
use crate::{Error, Result};

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Input,
    Param,
    MatMul(Var, Var),
    MatMulNt(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Sigmoid(Var),
    Softplus(Var),
    SoftmaxRows(Var),
    Conv1d(Var, Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<f64>,
        rstd: Vec<f64>,
    },
    MaxPool2 {
        x: Var,
        argmax: Vec<usize>,
    },
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols {
        x: Var,
        start: usize,
    },
    Sum(Var),
    WeightedSum(Vec<(Var, f64)>),
    Focal {
        p: Var,
        dp: Vec<f64>,
    },
    IouLoss {
        pred: Var,
        dpred: Vec<f64>,
    },
    Mse {
        pred: Var,
        labels: Vec<f64>,
        norm: f64,
    },
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
}

/// Per-element focal loss settings shared by the verb and noun branches.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FocalParams {
    pub alpha: f64,
    pub gamma: f64,
}

impl Default for FocalParams {
    fn default() -> Self {
        Self {
            alpha: 0.25,
            gamma: 2.0,
        }
    }
}

/// Probabilities are clamped into this interval before taking logs.
pub const PROB_CLAMP: f64 = 1e-7;

#[derive(Debug, Default, Clone)]
pub struct Graph {
    nodes: Vec<Node>,
    params: BTreeMap<usize, Var>,
    grads: Vec<Option<Vec<f64>>>,
}

fn shape_err(op: &'static str, a: &Tensor, b: &Tensor) -> Error {
    Error::Shape {
        op,
        lhs: a.shape().to_vec(),
        rhs: b.shape().to_vec(),
    }
}

fn matrix_dims(op: &'static str, t: &Tensor) -> Result<(usize, usize)> {
    match t.shape() {
        [r, c] => Ok((*r, *c)),
        s => Err(Error::Shape {
            op,
            lhs: s.to_vec(),
            rhs: vec![],
        }),
    }
}

fn accumulate(grads: &mut [Option<Vec<f64>>], v: Var, delta: &[f64]) {
    match &mut grads[v.0] {
        Some(g) => g.iter_mut().zip(delta).for_each(|(a, b)| *a += b),
        slot @ None => *slot = Some(delta.to_vec()),
    }
}

fn accumulate_owned(grads: &mut [Option<Vec<f64>>], v: Var, delta: Vec<f64>) {
    match &mut grads[v.0] {
        Some(g) => g.iter_mut().zip(&delta).for_each(|(a, b)| *a += b),
        slot @ None => *slot = Some(delta),
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Scalar value of a one-element node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value.data()[0]
    }

    /// Constant leaf. Gradients reaching it are recorded but go nowhere else.
    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(t.detached(), Op::Input)
    }

    /// Leaf bound to a stored parameter. Repeated requests return the same node.
    pub fn param(&mut self, store: &ParamStore, name: &str) -> Result<Var> {
        let idx = store
            .index_of(name)
            .ok_or_else(|| Error::UnknownParam(name.into()))?;
        if let Some(v) = self.params.get(&idx) {
            return Ok(*v);
        }
        let v = self.push(store.by_index(idx).detached(), Op::Param);
        self.params.insert(idx, v);
        Ok(v)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = kernels::matmul(self.value(a), self.value(b))?;
        Ok(self.push(out, Op::MatMul(a, b)))
    }

    /// `a · bᵀ` without materialising the transpose.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (m, k) = matrix_dims("matmul_nt", ta)?;
        let (n, k2) = matrix_dims("matmul_nt", tb)?;
        if k != k2 {
            return Err(shape_err("matmul_nt", ta, tb));
        }
        let out = Tensor::new(vec![m, n], kernels::matmul_nt_raw(ta.data(), tb.data(), m, k, n))?;
        Ok(self.push(out, Op::MatMulNt(a, b)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(shape_err("add", ta, tb));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x + y).collect();
        let out = Tensor::new(ta.shape().to_vec(), data)?;
        Ok(self.push(out, Op::Add(a, b)))
    }

    /// Adds a length-C vector to every row of a T×C matrix.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (tx, tb) = (self.value(x), self.value(bias));
        let (_, c) = matrix_dims("add_row", tx)?;
        if tb.numel() != c {
            return Err(shape_err("add_row", tx, tb));
        }
        let mut data = tx.data().to_vec();
        for row in data.chunks_mut(c) {
            row.iter_mut().zip(tb.data()).for_each(|(a, b)| *a += b);
        }
        let out = Tensor::new(tx.shape().to_vec(), data)?;
        Ok(self.push(out, Op::AddRow(x, bias)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(shape_err("mul", ta, tb));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x * y).collect();
        let out = Tensor::new(ta.shape().to_vec(), data)?;
        Ok(self.push(out, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let ta = self.value(a);
        let data = ta.data().iter().map(|x| x * c).collect();
        let out = Tensor::new(ta.shape().to_vec(), data).expect("same shape");
        self.push(out, Op::Scale(a, c))
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let ta = self.value(a);
        let data = ta.data().iter().map(|&x| f(x)).collect();
        let out = Tensor::new(ta.shape().to_vec(), data).expect("same shape");
        self.push(out, op)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, |x| if x > 0.0 { x } else { 0.0 }, Op::Relu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, math::sigmoid, Op::Sigmoid(a))
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        self.unary(a, math::softplus, Op::Softplus(a))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        let out = kernels::softmax_rows(self.value(a))?;
        Ok(self.push(out, Op::SoftmaxRows(a)))
    }

    pub fn conv1d(&mut self, x: Var, kernel: Var) -> Result<Var> {
        let out = kernels::conv1d(self.value(x), self.value(kernel))?;
        Ok(self.push(out, Op::Conv1d(x, kernel)))
    }

    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        self.layer_norm_eps(x, gain, bias, LAYER_NORM_EPS)
    }

    pub fn layer_norm_eps(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let (tx, tg, tb) = (self.value(x), self.value(gain), self.value(bias));
        let (m, n) = kernels::check_layer_norm(tx, tg, tb)?;
        let (xhat, rstd) = kernels::layer_norm_raw(tx.data(), m, n, eps);
        let mut data = xhat.clone();
        for row in data.chunks_mut(n) {
            for ((v, g), b) in row.iter_mut().zip(tg.data()).zip(tb.data()) {
                *v = *v * g + b;
            }
        }
        let out = Tensor::new(vec![m, n], data)?;
        Ok(self.push(
            out,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            },
        ))
    }

    /// Stride-2 max-pool over rows: T×C → ceil(T/2)×C.
    pub fn max_pool2(&mut self, x: Var) -> Result<Var> {
        let tx = self.value(x);
        let (t, c) = matrix_dims("max_pool2", tx)?;
        let out_t = t.div_ceil(2);
        let mut data = vec![0.0; out_t * c];
        let mut argmax = vec![0usize; out_t * c];
        let src = tx.data();
        for i in 0..out_t {
            let a = 2 * i;
            let b = (2 * i + 1).min(t - 1);
            for j in 0..c {
                let (va, vb) = (src[a * c + j], src[b * c + j]);
                let (v, from) = if vb > va { (vb, b) } else { (va, a) };
                data[i * c + j] = v;
                argmax[i * c + j] = from * c + j;
            }
        }
        let out = Tensor::new(vec![out_t, c], data)?;
        Ok(self.push(out, Op::MaxPool2 { x, argmax }))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = self.value(parts[0]).rows();
        let mut cols = 0;
        for &p in parts {
            let (r, c) = matrix_dims("concat_cols", self.value(p))?;
            if r != rows {
                return Err(shape_err("concat_cols", self.value(parts[0]), self.value(p)));
            }
            cols += c;
        }
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(i));
            }
        }
        let out = Tensor::new(vec![rows, cols], data)?;
        Ok(self.push(out, Op::ConcatCols(parts.to_vec())))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let cols = self.value(parts[0]).cols();
        let mut rows = 0;
        let mut data = Vec::new();
        for &p in parts {
            let (r, c) = matrix_dims("concat_rows", self.value(p))?;
            if c != cols {
                return Err(shape_err("concat_rows", self.value(parts[0]), self.value(p)));
            }
            rows += r;
            data.extend_from_slice(self.value(p).data());
        }
        let out = Tensor::new(vec![rows, cols], data)?;
        Ok(self.push(out, Op::ConcatRows(parts.to_vec())))
    }

    /// Columns `start..end` of a matrix.
    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let tx = self.value(x);
        let (rows, cols) = matrix_dims("slice_cols", tx)?;
        if start >= end || end > cols {
            return Err(Error::Shape {
                op: "slice_cols",
                lhs: tx.shape().to_vec(),
                rhs: vec![start, end],
            });
        }
        let mut data = Vec::with_capacity(rows * (end - start));
        for i in 0..rows {
            data.extend_from_slice(&tx.row(i)[start..end]);
        }
        let out = Tensor::new(vec![rows, end - start], data)?;
        Ok(self.push(out, Op::SliceCols { x, start }))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(x))
    }

    /// `Σ wᵢ·xᵢ` over scalar nodes.
    pub fn weighted_sum(&mut self, terms: &[(Var, f64)]) -> Result<Var> {
        let mut s = 0.0;
        for &(v, w) in terms {
            let t = self.value(v);
            if !t.is_scalar() {
                return Err(Error::contract("weighted_sum expects scalar terms"));
            }
            s += w * t.data()[0];
        }
        Ok(self.push(Tensor::scalar(s), Op::WeightedSum(terms.to_vec())))
    }

    /// Focal loss on probabilities `p` (any shape) against 0/1 `targets`, summed
    /// over elements and divided by `norm`. Probabilities are clamped into
    /// `[PROB_CLAMP, 1 − PROB_CLAMP]`; clamped elements pass no gradient.
    pub fn focal_loss(
        &mut self,
        p: Var,
        targets: &[f64],
        params: FocalParams,
        norm: f64,
    ) -> Result<Var> {
        let tp = self.value(p);
        if tp.numel() != targets.len() {
            return Err(Error::Shape {
                op: "focal_loss",
                lhs: tp.shape().to_vec(),
                rhs: vec![targets.len()],
            });
        }
        let FocalParams { alpha, gamma } = params;
        let mut total = 0.0;
        let mut dp = vec![0.0; targets.len()];
        for (i, (&raw, &y)) in tp.data().iter().zip(targets).enumerate() {
            let clamped = raw < PROB_CLAMP || raw > 1.0 - PROB_CLAMP;
            let q = raw.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
            let (loss, grad) = if y > 0.5 {
                let w = math::powf(1.0 - q, gamma);
                let lq = math::ln(q);
                let dw = if gamma == 0.0 {
                    0.0
                } else {
                    -gamma * math::powf(1.0 - q, gamma - 1.0)
                };
                (-alpha * w * lq, -alpha * (dw * lq + w / q))
            } else {
                let w = math::powf(q, gamma);
                let l1q = math::ln(1.0 - q);
                let dw = if gamma == 0.0 {
                    0.0
                } else {
                    gamma * math::powf(q, gamma - 1.0)
                };
                (
                    -(1.0 - alpha) * w * l1q,
                    -(1.0 - alpha) * (dw * l1q - w / (1.0 - q)),
                )
            };
            total += loss;
            dp[i] = if clamped { 0.0 } else { grad / norm };
        }
        Ok(self.push(Tensor::scalar(total / norm), Op::Focal { p, dp }))
    }

    /// Mean over the selected rows of `1 − tIoU` between `[t − a, t + b]` segments
    /// predicted as `pred: T×2` and the matching targets (both anchored at `t`).
    pub fn iou_loss(&mut self, pred: Var, targets: &[(f64, f64)], rows: &[usize]) -> Result<Var> {
        let tp = self.value(pred);
        let (t, c) = matrix_dims("iou_loss", tp)?;
        if c != 2 || targets.len() != rows.len() || rows.iter().any(|&r| r >= t) {
            return Err(Error::Shape {
                op: "iou_loss",
                lhs: tp.shape().to_vec(),
                rhs: vec![targets.len(), rows.len()],
            });
        }
        let mut dpred = vec![0.0; t * 2];
        let mut total = 0.0;
        let n = rows.len().max(1) as f64;
        for (&r, &(ts, te)) in rows.iter().zip(targets) {
            let (a, b) = (tp.data()[2 * r], tp.data()[2 * r + 1]);
            let inter = a.min(ts) + b.min(te);
            let union = a.max(ts) + b.max(te);
            if union <= 0.0 {
                continue;
            }
            total += 1.0 - inter / union;
            // d(min)/da and d(max)/da; ties split evenly.
            let part = |x: f64, y: f64| -> (f64, f64) {
                if x < y {
                    (1.0, 0.0)
                } else if x > y {
                    (0.0, 1.0)
                } else {
                    (0.5, 0.5)
                }
            };
            let (dia, dua) = part(a, ts);
            let (dib, dub) = part(b, te);
            let u2 = union * union;
            dpred[2 * r] = -(dia * union - inter * dua) / u2 / n;
            dpred[2 * r + 1] = -(dib * union - inter * dub) / u2 / n;
        }
        Ok(self.push(Tensor::scalar(total / n), Op::IouLoss { pred, dpred }))
    }

    /// `(1/T′)·Σ (label − pred)²` over every element of `pred`.
    pub fn mse_loss(&mut self, pred: Var, labels: &[f64]) -> Result<Var> {
        let tp = self.value(pred);
        if tp.numel() != labels.len() {
            return Err(Error::Shape {
                op: "mse_loss",
                lhs: tp.shape().to_vec(),
                rhs: vec![labels.len()],
            });
        }
        let norm = labels.len().max(1) as f64;
        let s: f64 = tp
            .data()
            .iter()
            .zip(labels)
            .map(|(p, y)| (y - p) * (y - p))
            .sum();
        Ok(self.push(
            Tensor::scalar(s / norm),
            Op::Mse {
                pred,
                labels: labels.to_vec(),
                norm,
            },
        ))
    }

    /// Gradient of the last `backward` call with respect to `v`.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Reverse sweep from a scalar `loss`; parameter gradients are added into
    /// `store`, so repeated calls accumulate.
    pub fn backward(&mut self, loss: Var, store: &mut ParamStore) -> Result<()> {
        if !self.value(loss).is_scalar() {
            return Err(Error::contract(alloc::format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(gy) = grads[i].take() else { continue };
            self.backprop_node(i, &gy, &mut grads)?;
            grads[i] = Some(gy);
        }
        for (&idx, &v) in &self.params {
            if let Some(g) = &grads[v.0] {
                let t = store.by_index_mut(idx);
                if t.requires_grad() {
                    t.accumulate_grad(g);
                }
            }
        }
        self.grads = grads;
        Ok(())
    }

    fn backprop_node(&self, i: usize, gy: &[f64], grads: &mut [Option<Vec<f64>>]) -> Result<()> {
        let node = &self.nodes[i];
        match &node.op {
            Op::Input | Op::Param => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, k) = (ta.rows(), ta.cols());
                let n = tb.cols();
                accumulate_owned(grads, *a, kernels::matmul_nt_raw(gy, tb.data(), m, n, k));
                accumulate_owned(grads, *b, kernels::matmul_tn_raw(ta.data(), gy, m, k, n));
            }
            Op::MatMulNt(a, b) => {
                // y = a·bᵀ, a: m×k, b: n×k
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, k) = (ta.rows(), ta.cols());
                let n = tb.rows();
                accumulate_owned(grads, *a, kernels::matmul_raw(gy, tb.data(), m, n, k));
                accumulate_owned(grads, *b, kernels::matmul_tn_raw(gy, ta.data(), m, n, k));
            }
            Op::Add(a, b) => {
                accumulate(grads, *a, gy);
                accumulate(grads, *b, gy);
            }
            Op::AddRow(x, bias) => {
                accumulate(grads, *x, gy);
                let c = self.value(*bias).numel();
                let mut gb = vec![0.0; c];
                for row in gy.chunks(c) {
                    gb.iter_mut().zip(row).for_each(|(a, b)| *a += b);
                }
                accumulate_owned(grads, *bias, gb);
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let ga = gy.iter().zip(tb.data()).map(|(g, y)| g * y).collect();
                let gb = gy.iter().zip(ta.data()).map(|(g, x)| g * x).collect();
                accumulate_owned(grads, *a, ga);
                accumulate_owned(grads, *b, gb);
            }
            Op::Scale(a, c) => {
                accumulate_owned(grads, *a, gy.iter().map(|g| g * c).collect());
            }
            Op::Relu(a) => {
                let tx = self.value(*a);
                let g = gy
                    .iter()
                    .zip(tx.data())
                    .map(|(g, &x)| if x > 0.0 { *g } else { 0.0 })
                    .collect();
                accumulate_owned(grads, *a, g);
            }
            Op::Sigmoid(a) => {
                let g = gy
                    .iter()
                    .zip(node.value.data())
                    .map(|(g, &y)| g * y * (1.0 - y))
                    .collect();
                accumulate_owned(grads, *a, g);
            }
            Op::Softplus(a) => {
                let tx = self.value(*a);
                let g = gy
                    .iter()
                    .zip(tx.data())
                    .map(|(g, &x)| g * math::sigmoid(x))
                    .collect();
                accumulate_owned(grads, *a, g);
            }
            Op::SoftmaxRows(a) => {
                let y = node.value.data();
                let n = node.value.cols();
                let mut g = vec![0.0; y.len()];
                for ((grow, yrow), orow) in gy.chunks(n).zip(y.chunks(n)).zip(g.chunks_mut(n)) {
                    let dot: f64 = grow.iter().zip(yrow).map(|(a, b)| a * b).sum();
                    for ((o, gv), yv) in orow.iter_mut().zip(grow).zip(yrow) {
                        *o = yv * (gv - dot);
                    }
                }
                accumulate_owned(grads, *a, g);
            }
            Op::Conv1d(x, kernel) => {
                let (tx, tk) = (self.value(*x), self.value(*kernel));
                let (t_len, width, c_in, c_out) = kernels::conv1d_dims(tx, tk)?;
                let pad = width / 2;
                let mut gx = vec![0.0; tx.numel()];
                let mut gk = vec![0.0; tk.numel()];
                let (xd, kd) = (tx.data(), tk.data());
                for t in 0..t_len {
                    let grow = &gy[t * c_out..(t + 1) * c_out];
                    for j in 0..width {
                        let src = t + j;
                        if src < pad || src - pad >= t_len {
                            continue;
                        }
                        let s = src - pad;
                        for c in 0..c_in {
                            let kbase = (j * c_in + c) * c_out;
                            let krow = &kd[kbase..kbase + c_out];
                            let xv = xd[s * c_in + c];
                            let mut acc = 0.0;
                            let gkrow = &mut gk[kbase..kbase + c_out];
                            for o in 0..c_out {
                                acc += grow[o] * krow[o];
                                gkrow[o] += xv * grow[o];
                            }
                            gx[s * c_in + c] += acc;
                        }
                    }
                }
                accumulate_owned(grads, *x, gx);
                accumulate_owned(grads, *kernel, gk);
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            } => {
                let n = self.value(*gain).numel();
                let gd = self.value(*gain).data();
                let mut ggain = vec![0.0; n];
                let mut gbias = vec![0.0; n];
                let mut gx = vec![0.0; xhat.len()];
                for (row, (grow, hrow)) in gy.chunks(n).zip(xhat.chunks(n)).enumerate() {
                    let mut mean_d = 0.0;
                    let mut mean_dh = 0.0;
                    for j in 0..n {
                        ggain[j] += grow[j] * hrow[j];
                        gbias[j] += grow[j];
                        let d = grow[j] * gd[j];
                        mean_d += d;
                        mean_dh += d * hrow[j];
                    }
                    mean_d /= n as f64;
                    mean_dh /= n as f64;
                    let r = rstd[row];
                    for j in 0..n {
                        let d = grow[j] * gd[j];
                        gx[row * n + j] = r * (d - mean_d - hrow[j] * mean_dh);
                    }
                }
                accumulate_owned(grads, *x, gx);
                accumulate_owned(grads, *gain, ggain);
                accumulate_owned(grads, *bias, gbias);
            }
            Op::MaxPool2 { x, argmax } => {
                let mut gx = vec![0.0; self.value(*x).numel()];
                for (g, &src) in gy.iter().zip(argmax) {
                    gx[src] += g;
                }
                accumulate_owned(grads, *x, gx);
            }
            Op::ConcatCols(parts) => {
                let rows = node.value.rows();
                let cols = node.value.cols();
                let mut offset = 0;
                for &p in parts {
                    let c = self.value(p).cols();
                    let mut gp = Vec::with_capacity(rows * c);
                    for r in 0..rows {
                        gp.extend_from_slice(&gy[r * cols + offset..r * cols + offset + c]);
                    }
                    accumulate_owned(grads, p, gp);
                    offset += c;
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let len = self.value(p).numel();
                    accumulate(grads, p, &gy[offset..offset + len]);
                    offset += len;
                }
            }
            Op::SliceCols { x, start } => {
                let tx = self.value(*x);
                let cols = tx.cols();
                let width = node.value.cols();
                let mut gx = vec![0.0; tx.numel()];
                for (r, grow) in gy.chunks(width).enumerate() {
                    gx[r * cols + start..r * cols + start + width].copy_from_slice(grow);
                }
                accumulate_owned(grads, *x, gx);
            }
            Op::Sum(x) => {
                accumulate_owned(grads, *x, vec![gy[0]; self.value(*x).numel()]);
            }
            Op::WeightedSum(terms) => {
                for &(v, w) in terms {
                    accumulate_owned(grads, v, vec![gy[0] * w]);
                }
            }
            Op::Focal { p, dp } => {
                accumulate_owned(grads, *p, dp.iter().map(|d| d * gy[0]).collect());
            }
            Op::IouLoss { pred, dpred } => {
                accumulate_owned(grads, *pred, dpred.iter().map(|d| d * gy[0]).collect());
            }
            Op::Mse { pred, labels, norm } => {
                let tp = self.value(*pred);
                let g = tp
                    .data()
                    .iter()
                    .zip(labels)
                    .map(|(p, y)| gy[0] * 2.0 * (p - y) / norm)
                    .collect();
                accumulate_owned(grads, *pred, g);
            }
        }
        Ok(())
    }
}
