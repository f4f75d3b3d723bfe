//! Define-by-run reverse-mode autodiff.
//!
//! Every operation appends a node to the [`Tape`]; nodes are therefore stored
//! in topological order and [`Tape::backward`] is a single reverse sweep.
//! The tape is rebuilt for every forward pass.

use rand::Rng;

use crate::error::{shape_err, EngineError, Result};
use crate::kernels::{gemm_nn, gemm_nt, gemm_tn};
use crate::param::{ParamId, ParamStore};
use crate::tensor::Tensor;

pub const BATCH_NORM_EPS: f64 = 1e-5;
pub const BATCH_NORM_MOMENTUM: f64 = 0.1;
pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Running mean/variance of a batch-norm layer (not learnable).
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct RunningStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl RunningStats {
    pub fn new(features: usize) -> Self {
        Self {
            mean: vec![0.0; features],
            var: vec![1.0; features],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum NormKind {
    BatchTrain,
    BatchEval,
    Layer,
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    BatchMatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddBroadcast(Var, Var),
    Scale(Var, f64),
    Reshape(Var),
    Permute(Var, Vec<usize>),
    Concat(Vec<Var>, usize),
    Slice {
        x: Var,
        axis: usize,
        start: usize,
    },
    Sum(Var),
    Mean(Var),
    MeanAxis(Var, usize),
    Softmax(Var, usize),
    Gelu(Var),
    Norm {
        x: Var,
        gamma: Var,
        beta: Var,
        kind: NormKind,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Dropout(Var, Vec<f64>),
    Gather(Var, Vec<usize>),
    CrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        probs: Vec<f64>,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
    param: Option<ParamId>,
}

/// Record of executed operations.
#[derive(Debug)]
pub struct Tape {
    nodes: Vec<Node>,
    checked: bool,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients produced by [`Tape::backward`].
#[derive(Debug, Clone)]
pub struct Gradients {
    leaves: Vec<Option<Tensor>>,
    params: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of a leaf created with `requires_grad`.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.leaves.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient accumulated over every leaf bound to `id`.
    pub fn param(&self, id: ParamId) -> Option<&Tensor> {
        self.params.get(id.0).and_then(Option::as_ref)
    }

    /// Dense per-parameter gradients, zero where a parameter was unused.
    pub fn dense(&self, store: &ParamStore) -> Vec<Tensor> {
        store
            .iter()
            .map(|(id, _, t)| {
                self.param(id)
                    .cloned()
                    .unwrap_or_else(|| Tensor::zeros(t.shape()))
            })
            .collect()
    }
}

fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn permute_data(data: &[f64], shape: &[usize], perm: &[usize]) -> (Vec<f64>, Vec<usize>) {
    let rank = shape.len();
    let mut in_strides = vec![1usize; rank];
    for i in (0..rank.saturating_sub(1)).rev() {
        in_strides[i] = in_strides[i + 1] * shape[i + 1];
    }
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let mut out = Vec::with_capacity(data.len());
    let mut idx = vec![0usize; rank];
    let mut offset = 0usize;
    for _ in 0..data.len() {
        out.push(data[offset]);
        for d in (0..rank).rev() {
            idx[d] += 1;
            offset += strides[d];
            if idx[d] < out_shape[d] {
                break;
            }
            offset -= strides[d] * out_shape[d];
            idx[d] = 0;
        }
    }
    (out, out_shape)
}

fn gelu_scalar(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))
}

fn gelu_grad(x: f64) -> f64 {
    let cdf = 0.5 * (1.0 + libm::erf(x / std::f64::consts::SQRT_2));
    let pdf = (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
    cdf + x * pdf
}

/// Exact-erf GELU, `x * Phi(x)`.
pub fn gelu(x: f64) -> f64 {
    gelu_scalar(x)
}

impl Tape {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            checked: cfg!(debug_assertions),
        }
    }

    /// Enables or disables the per-op non-finite check.
    pub fn set_checked(&mut self, checked: bool) {
        self.checked = checked;
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, name: &'static str, value: Tensor, op: Op, inputs: &[Var]) -> Result<Var> {
        if self.checked {
            value.check_finite(name)?;
        }
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            param: None,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
            param: None,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    /// Binds a learnable parameter as a gradient-carrying leaf.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        let v = self.leaf(store.get(id).clone(), true);
        self.nodes[v.0].param = Some(id);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return shape_err("matmul", format!("{sa:?} x {sb:?}"));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; m * n];
        gemm_nn(self.value(a).data(), self.value(b).data(), &mut out, m, k, n);
        self.push("matmul", Tensor::new(vec![m, n], out)?, Op::MatMul(a, b), &[a, b])
    }

    /// Batched product `[g, m, k] x [g, k, n] -> [g, m, n]`.
    pub fn bmm(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] || sa[2] != sb[1] {
            return shape_err("bmm", format!("{sa:?} x {sb:?}"));
        }
        let (g, m, k, n) = (sa[0], sa[1], sa[2], sb[2]);
        let mut out = vec![0.0; g * m * n];
        let (da, db) = (self.value(a).data(), self.value(b).data());
        for i in 0..g {
            gemm_nn(
                &da[i * m * k..(i + 1) * m * k],
                &db[i * k * n..(i + 1) * k * n],
                &mut out[i * m * n..(i + 1) * m * n],
                m,
                k,
                n,
            );
        }
        self.push("bmm", Tensor::new(vec![g, m, n], out)?, Op::BatchMatMul(a, b), &[a, b])
    }

    fn zip_same(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return shape_err(name, format!("{:?} vs {:?}", self.shape(a), self.shape(b)));
        }
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let value = Tensor::new(self.shape(a).to_vec(), data)?;
        self.push(name, value, op, &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_same("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_same("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_same("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    /// `a + b` where `b`'s shape is a trailing suffix of `a`'s (bias rows,
    /// positional tables).
    pub fn add_broadcast(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sb.len() > sa.len() || sa[sa.len() - sb.len()..] != *sb {
            return shape_err("add_broadcast", format!("{sa:?} + {sb:?}"));
        }
        let inner = self.value(b).numel();
        let db = self.value(b).data();
        let data: Vec<f64> = self
            .value(a)
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| x + db[i % inner])
            .collect();
        let value = Tensor::new(sa.to_vec(), data)?;
        self.push("add_broadcast", value, Op::AddBroadcast(a, b), &[a, b])
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Result<Var> {
        let data = self.value(x).data().iter().map(|v| v * factor).collect();
        let value = Tensor::new(self.shape(x).to_vec(), data)?;
        self.push("scale", value, Op::Scale(x, factor), &[x])
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).clone().reshaped(shape)?;
        self.push("reshape", value, Op::Reshape(x), &[x])
    }

    pub fn permute(&mut self, x: Var, perm: &[usize]) -> Result<Var> {
        let shape = self.shape(x);
        let mut seen = vec![false; shape.len()];
        if perm.len() != shape.len() || perm.iter().any(|&p| p >= shape.len() || std::mem::replace(&mut seen[p], true)) {
            return shape_err("permute", format!("{perm:?} on {shape:?}"));
        }
        let (data, out_shape) = permute_data(self.value(x).data(), shape, perm);
        let value = Tensor::new(out_shape, data)?;
        self.push("permute", value, Op::Permute(x, perm.to_vec()), &[x])
    }

    /// Swaps the last two axes.
    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let r = self.shape(x).len();
        if r < 2 {
            return shape_err("transpose", format!("rank {r}"));
        }
        let mut perm: Vec<usize> = (0..r).collect();
        perm.swap(r - 1, r - 2);
        self.permute(x, &perm)
    }

    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        let Some(&first) = xs.first() else {
            return shape_err("concat", "no inputs");
        };
        let base = self.shape(first).to_vec();
        if axis >= base.len() {
            return shape_err("concat", format!("axis {axis} on {base:?}"));
        }
        let mut total = 0;
        for &v in xs {
            let s = self.shape(v);
            if s.len() != base.len()
                || s.iter().enumerate().any(|(i, &d)| i != axis && d != base[i])
            {
                return shape_err("concat", format!("{base:?} vs {s:?}"));
            }
            total += s[axis];
        }
        let (outer, _, inner) = split_axis(&base, axis);
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &v in xs {
                let len = self.shape(v)[axis];
                let d = self.value(v).data();
                out.extend_from_slice(&d[o * len * inner..(o + 1) * len * inner]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        let value = Tensor::new(shape, out)?;
        self.push("concat", value, Op::Concat(xs.to_vec(), axis), xs)
    }

    pub fn slice(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() || start + len > shape[axis] {
            return shape_err("slice", format!("[{start}, {}) on axis {axis} of {shape:?}", start + len));
        }
        let (outer, n, inner) = split_axis(&shape, axis);
        let d = self.value(x).data();
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = o * n * inner + start * inner;
            out.extend_from_slice(&d[base..base + len * inner]);
        }
        let mut s = shape;
        s[axis] = len;
        let value = Tensor::new(s, out)?;
        self.push("slice", value, Op::Slice { x, axis, start }, &[x])
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).data().iter().sum();
        self.push("sum", Tensor::scalar(s), Op::Sum(x), &[x])
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let s = t.data().iter().sum::<f64>() / t.numel() as f64;
        self.push("mean", Tensor::scalar(s), Op::Mean(x), &[x])
    }

    /// Mean over one axis, removing it.
    pub fn mean_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return shape_err("mean_axis", format!("axis {axis} on {shape:?}"));
        }
        let (outer, n, inner) = split_axis(&shape, axis);
        let d = self.value(x).data();
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for k in 0..n {
                for i in 0..inner {
                    out[o * inner + i] += d[(o * n + k) * inner + i];
                }
            }
        }
        out.iter_mut().for_each(|v| *v /= n as f64);
        let mut s = shape;
        s.remove(axis);
        let value = Tensor::new(s, out)?;
        self.push("mean_axis", value, Op::MeanAxis(x, axis), &[x])
    }

    /// Softmax along `axis`, stabilised by subtracting the maximum.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return shape_err("softmax", format!("axis {axis} on {shape:?}"));
        }
        let out = softmax_data(self.value(x).data(), &shape, axis);
        let value = Tensor::new(shape, out)?;
        self.push("softmax", value, Op::Softmax(x, axis), &[x])
    }

    pub fn gelu(&mut self, x: Var) -> Result<Var> {
        let data = self.value(x).data().iter().map(|&v| gelu_scalar(v)).collect();
        let value = Tensor::new(self.shape(x).to_vec(), data)?;
        self.push("gelu", value, Op::Gelu(x), &[x])
    }

    /// Batch normalisation over every axis but the last (the feature axis).
    ///
    /// Training mode normalises with batch statistics and updates `running`;
    /// eval mode uses `running` as is.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        running: &mut RunningStats,
        training: bool,
    ) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let f = *shape.last().unwrap_or(&0);
        if shape.len() < 2
            || self.shape(gamma) != [f]
            || self.shape(beta) != [f]
            || running.mean.len() != f
        {
            return shape_err("batch_norm", format!("x {shape:?}, features {f}"));
        }
        let n = self.value(x).numel() / f;
        if training && n < 2 {
            return Err(EngineError::Invalid(
                "batch_norm: training needs at least 2 rows per feature".into(),
            ));
        }
        let d = self.value(x).data();
        let (mean, var) = if training {
            let mut mean = vec![0.0; f];
            for r in 0..n {
                for j in 0..f {
                    mean[j] += d[r * f + j];
                }
            }
            mean.iter_mut().for_each(|m| *m /= n as f64);
            let mut var = vec![0.0; f];
            for r in 0..n {
                for j in 0..f {
                    let c = d[r * f + j] - mean[j];
                    var[j] += c * c;
                }
            }
            var.iter_mut().for_each(|v| *v /= n as f64);
            for j in 0..f {
                let unbiased = var[j] * n as f64 / (n - 1) as f64;
                running.mean[j] =
                    (1.0 - BATCH_NORM_MOMENTUM) * running.mean[j] + BATCH_NORM_MOMENTUM * mean[j];
                running.var[j] =
                    (1.0 - BATCH_NORM_MOMENTUM) * running.var[j] + BATCH_NORM_MOMENTUM * unbiased;
            }
            (mean, var)
        } else {
            (running.mean.clone(), running.var.clone())
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BATCH_NORM_EPS).sqrt()).collect();
        let (g, b) = (self.value(gamma).data(), self.value(beta).data());
        let mut xhat = vec![0.0; n * f];
        let mut out = vec![0.0; n * f];
        for r in 0..n {
            for j in 0..f {
                let h = (d[r * f + j] - mean[j]) * inv_std[j];
                xhat[r * f + j] = h;
                out[r * f + j] = g[j] * h + b[j];
            }
        }
        let kind = if training {
            NormKind::BatchTrain
        } else {
            NormKind::BatchEval
        };
        let value = Tensor::new(shape, out)?;
        self.push(
            "batch_norm",
            value,
            Op::Norm {
                x,
                gamma,
                beta,
                kind,
                xhat,
                inv_std,
            },
            &[x, gamma, beta],
        )
    }

    /// Layer normalisation over the last axis.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let f = *shape.last().unwrap_or(&0);
        if shape.is_empty() || f == 0 || self.shape(gamma) != [f] || self.shape(beta) != [f] {
            return shape_err("layer_norm", format!("x {shape:?}"));
        }
        let rows = self.value(x).numel() / f;
        let d = self.value(x).data();
        let (g, b) = (self.value(gamma).data(), self.value(beta).data());
        let mut xhat = vec![0.0; rows * f];
        let mut out = vec![0.0; rows * f];
        let mut inv_std = vec![0.0; rows];
        for r in 0..rows {
            let row = &d[r * f..(r + 1) * f];
            let mean = row.iter().sum::<f64>() / f as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / f as f64;
            let is = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            inv_std[r] = is;
            for j in 0..f {
                let h = (row[j] - mean) * is;
                xhat[r * f + j] = h;
                out[r * f + j] = g[j] * h + b[j];
            }
        }
        let value = Tensor::new(shape, out)?;
        self.push(
            "layer_norm",
            value,
            Op::Norm {
                x,
                gamma,
                beta,
                kind: NormKind::Layer,
                xhat,
                inv_std,
            },
            &[x, gamma, beta],
        )
    }

    /// Inverted dropout: identity when not training, otherwise a Bernoulli
    /// keep-mask scaled by `1 / (1 - p)`.
    pub fn dropout<R: Rng + ?Sized>(
        &mut self,
        x: Var,
        p: f64,
        training: bool,
        rng: &mut R,
    ) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(EngineError::Invalid(format!("dropout rate {p} outside [0, 1)")));
        }
        if !training || p == 0.0 {
            return Ok(x);
        }
        let keep = 1.0 / (1.0 - p);
        let n = self.value(x).numel();
        let mask: Vec<f64> = (0..n)
            .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep })
            .collect();
        let data = self
            .value(x)
            .data()
            .iter()
            .zip(&mask)
            .map(|(v, m)| v * m)
            .collect();
        let value = Tensor::new(self.shape(x).to_vec(), data)?;
        self.push("dropout", value, Op::Dropout(x, mask), &[x])
    }

    /// Row lookup into a `[rows, width]` table.
    pub fn gather_rows(&mut self, table: Var, indices: &[usize]) -> Result<Var> {
        let s = self.shape(table).to_vec();
        if s.len() != 2 || indices.iter().any(|&i| i >= s[0]) {
            return shape_err("gather_rows", format!("indices into {s:?}"));
        }
        let w = s[1];
        let d = self.value(table).data();
        let mut out = Vec::with_capacity(indices.len() * w);
        for &i in indices {
            out.extend_from_slice(&d[i * w..(i + 1) * w]);
        }
        let value = Tensor::new(vec![indices.len(), w], out)?;
        self.push("gather_rows", value, Op::Gather(table, indices.to_vec()), &[table])
    }

    /// Mean negative log-likelihood of `labels` under `softmax(logits)`.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let s = self.shape(logits).to_vec();
        if s.len() != 2 || s[0] != labels.len() || labels.iter().any(|&l| l >= s[1]) {
            return shape_err("cross_entropy", format!("logits {s:?}, {} labels", labels.len()));
        }
        let probs = softmax_data(self.value(logits).data(), &s, 1);
        let k = s[1];
        let loss = labels
            .iter()
            .enumerate()
            .map(|(i, &l)| -probs[i * k + l].max(f64::MIN_POSITIVE).ln())
            .sum::<f64>()
            / labels.len() as f64;
        self.push(
            "cross_entropy",
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
            &[logits],
        )
    }

    /// Reverse sweep from a scalar `loss`. Consumes the tape.
    pub fn backward(self, loss: Var) -> Result<Gradients> {
        let loss_shape = self.shape(loss).to_vec();
        if self.value(loss).numel() != 1 {
            return Err(EngineError::NotScalar(loss_shape));
        }
        let n_params = self
            .nodes
            .iter()
            .filter_map(|n| n.param)
            .map(|p| p.0 + 1)
            .max()
            .unwrap_or(0);
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        let mut leaves: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        let mut params: Vec<Option<Tensor>> = vec![None; n_params];

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            if let Op::Leaf = node.op {
                let t = Tensor::new(node.value.shape().to_vec(), g)?;
                if let Some(p) = node.param {
                    match &mut params[p.0] {
                        Some(acc) => acc
                            .data_mut()
                            .iter_mut()
                            .zip(t.data())
                            .for_each(|(a, b)| *a += b),
                        slot => *slot = Some(t.clone()),
                    }
                }
                leaves[i] = Some(t);
                continue;
            }
            self.backward_node(i, &g, &mut grads);
        }
        Ok(Gradients { leaves, params })
    }

    fn accumulate(&self, grads: &mut [Option<Vec<f64>>], v: Var, f: impl FnOnce(&mut [f64])) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        let slot = grads[v.0].get_or_insert_with(|| vec![0.0; self.nodes[v.0].value.numel()]);
        f(slot);
    }

    fn backward_node(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                self.accumulate(grads, *a, |ga| gemm_nt(g, vb, ga, m, n, k));
                self.accumulate(grads, *b, |gb| gemm_tn(va, g, gb, m, k, n));
            }
            Op::BatchMatMul(a, b) => {
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                let (bs, m, k, n) = (sa[0], sa[1], sa[2], sb[2]);
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                self.accumulate(grads, *a, |ga| {
                    for t in 0..bs {
                        gemm_nt(
                            &g[t * m * n..(t + 1) * m * n],
                            &vb[t * k * n..(t + 1) * k * n],
                            &mut ga[t * m * k..(t + 1) * m * k],
                            m,
                            n,
                            k,
                        );
                    }
                });
                self.accumulate(grads, *b, |gb| {
                    for t in 0..bs {
                        gemm_tn(
                            &va[t * m * k..(t + 1) * m * k],
                            &g[t * m * n..(t + 1) * m * n],
                            &mut gb[t * k * n..(t + 1) * k * n],
                            m,
                            k,
                            n,
                        );
                    }
                });
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, |ga| add_into(ga, g));
                self.accumulate(grads, *b, |gb| add_into(gb, g));
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, |ga| add_into(ga, g));
                self.accumulate(grads, *b, |gb| gb.iter_mut().zip(g).for_each(|(x, y)| *x -= y));
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                self.accumulate(grads, *a, |ga| {
                    ga.iter_mut().zip(g.iter().zip(vb)).for_each(|(x, (y, z))| *x += y * z)
                });
                self.accumulate(grads, *b, |gb| {
                    gb.iter_mut().zip(g.iter().zip(va)).for_each(|(x, (y, z))| *x += y * z)
                });
            }
            Op::AddBroadcast(a, b) => {
                self.accumulate(grads, *a, |ga| add_into(ga, g));
                let inner = self.value(*b).numel();
                self.accumulate(grads, *b, |gb| {
                    for (j, &v) in g.iter().enumerate() {
                        gb[j % inner] += v;
                    }
                });
            }
            Op::Scale(x, f) => {
                self.accumulate(grads, *x, |gx| {
                    gx.iter_mut().zip(g).for_each(|(a, b)| *a += b * f)
                });
            }
            Op::Reshape(x) => {
                self.accumulate(grads, *x, |gx| add_into(gx, g));
            }
            Op::Dropout(x, mask) => {
                self.accumulate(grads, *x, |gx| {
                    gx.iter_mut().zip(g.iter().zip(mask)).for_each(|(a, (b, m))| *a += b * m)
                });
            }
            Op::Permute(x, perm) => {
                let mut inverse = vec![0; perm.len()];
                for (i, &p) in perm.iter().enumerate() {
                    inverse[p] = i;
                }
                let (back, _) = permute_data(g, node.value.shape(), &inverse);
                self.accumulate(grads, *x, |gx| add_into(gx, &back));
            }
            Op::Concat(xs, axis) => {
                let shape = node.value.shape();
                let (outer, total, inner) = split_axis(shape, *axis);
                let mut offset = 0;
                for &v in xs {
                    let len = self.shape(v)[*axis];
                    self.accumulate(grads, v, |gv| {
                        for o in 0..outer {
                            let src = (o * total + offset) * inner;
                            let dst = o * len * inner;
                            add_into(&mut gv[dst..dst + len * inner], &g[src..src + len * inner]);
                        }
                    });
                    offset += len;
                }
            }
            Op::Slice { x, axis, start } => {
                let (outer, n, inner) = split_axis(self.shape(*x), *axis);
                let len = node.value.shape()[*axis];
                self.accumulate(grads, *x, |gx| {
                    for o in 0..outer {
                        let dst = o * n * inner + start * inner;
                        let src = o * len * inner;
                        add_into(&mut gx[dst..dst + len * inner], &g[src..src + len * inner]);
                    }
                });
            }
            Op::Sum(x) => {
                self.accumulate(grads, *x, |gx| gx.iter_mut().for_each(|a| *a += g[0]));
            }
            Op::Mean(x) => {
                let n = self.value(*x).numel() as f64;
                self.accumulate(grads, *x, |gx| gx.iter_mut().for_each(|a| *a += g[0] / n));
            }
            Op::MeanAxis(x, axis) => {
                let (outer, n, inner) = split_axis(self.shape(*x), *axis);
                self.accumulate(grads, *x, |gx| {
                    for o in 0..outer {
                        for k in 0..n {
                            for i in 0..inner {
                                gx[(o * n + k) * inner + i] += g[o * inner + i] / n as f64;
                            }
                        }
                    }
                });
            }
            Op::Softmax(x, axis) => {
                let y = node.value.data();
                let (outer, n, inner) = split_axis(node.value.shape(), *axis);
                self.accumulate(grads, *x, |gx| {
                    for o in 0..outer {
                        for i in 0..inner {
                            let idx = |k: usize| (o * n + k) * inner + i;
                            let dot: f64 = (0..n).map(|k| g[idx(k)] * y[idx(k)]).sum();
                            for k in 0..n {
                                gx[idx(k)] += y[idx(k)] * (g[idx(k)] - dot);
                            }
                        }
                    }
                });
            }
            Op::Gelu(x) => {
                let vx = self.value(*x).data();
                self.accumulate(grads, *x, |gx| {
                    gx.iter_mut()
                        .zip(g.iter().zip(vx))
                        .for_each(|(a, (b, &v))| *a += b * gelu_grad(v))
                });
            }
            Op::Norm {
                x,
                gamma,
                beta,
                kind,
                xhat,
                inv_std,
            } => {
                let f = self.value(*gamma).numel();
                let rows = xhat.len() / f;
                let gam = self.value(*gamma).data();
                self.accumulate(grads, *gamma, |gg| {
                    for r in 0..rows {
                        for j in 0..f {
                            gg[j] += g[r * f + j] * xhat[r * f + j];
                        }
                    }
                });
                self.accumulate(grads, *beta, |gb| {
                    for r in 0..rows {
                        for j in 0..f {
                            gb[j] += g[r * f + j];
                        }
                    }
                });
                self.accumulate(grads, *x, |gx| match kind {
                    NormKind::BatchEval => {
                        for r in 0..rows {
                            for j in 0..f {
                                gx[r * f + j] += g[r * f + j] * gam[j] * inv_std[j];
                            }
                        }
                    }
                    NormKind::BatchTrain => {
                        let n = rows as f64;
                        for j in 0..f {
                            let mut s = 0.0;
                            let mut sh = 0.0;
                            for r in 0..rows {
                                let dh = g[r * f + j] * gam[j];
                                s += dh;
                                sh += dh * xhat[r * f + j];
                            }
                            for r in 0..rows {
                                let dh = g[r * f + j] * gam[j];
                                gx[r * f + j] +=
                                    inv_std[j] / n * (n * dh - s - xhat[r * f + j] * sh);
                            }
                        }
                    }
                    NormKind::Layer => {
                        let n = f as f64;
                        for r in 0..rows {
                            let mut s = 0.0;
                            let mut sh = 0.0;
                            for j in 0..f {
                                let dh = g[r * f + j] * gam[j];
                                s += dh;
                                sh += dh * xhat[r * f + j];
                            }
                            for j in 0..f {
                                let dh = g[r * f + j] * gam[j];
                                gx[r * f + j] +=
                                    inv_std[r] / n * (n * dh - s - xhat[r * f + j] * sh);
                            }
                        }
                    }
                });
            }
            Op::Gather(table, indices) => {
                let w = self.shape(*table)[1];
                self.accumulate(grads, *table, |gt| {
                    for (r, &i) in indices.iter().enumerate() {
                        add_into(&mut gt[i * w..(i + 1) * w], &g[r * w..(r + 1) * w]);
                    }
                });
            }
            Op::CrossEntropy {
                logits,
                labels,
                probs,
            } => {
                let k = self.shape(*logits)[1];
                let b = labels.len() as f64;
                self.accumulate(grads, *logits, |gl| {
                    for (r, &l) in labels.iter().enumerate() {
                        for j in 0..k {
                            let y = if j == l { 1.0 } else { 0.0 };
                            gl[r * k + j] += g[0] * (probs[r * k + j] - y) / b;
                        }
                    }
                });
            }
        }
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    dst.iter_mut().zip(src).for_each(|(a, b)| *a += b);
}

pub(crate) fn softmax_data(d: &[f64], shape: &[usize], axis: usize) -> Vec<f64> {
    let (outer, n, inner) = split_axis(shape, axis);
    let mut out = vec![0.0; d.len()];
    for o in 0..outer {
        for i in 0..inner {
            let idx = |k: usize| (o * n + k) * inner + i;
            let max = (0..n).map(|k| d[idx(k)]).fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for k in 0..n {
                let e = (d[idx(k)] - max).exp();
                out[idx(k)] = e;
                total += e;
            }
            for k in 0..n {
                out[idx(k)] /= total;
            }
        }
    }
    out
}

/// Softmax of a plain tensor along `axis`, outside any graph.
pub fn softmax(t: &Tensor, axis: usize) -> Result<Tensor> {
    if axis >= t.rank() {
        return shape_err("softmax", format!("axis {axis} on {:?}", t.shape()));
    }
    Tensor::new(t.shape().to_vec(), softmax_data(t.data(), t.shape(), axis))
}
