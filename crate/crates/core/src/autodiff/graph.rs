//! Tape-based reverse-mode differentiation.
//!
//! Every op appends a node holding its value and whatever it needs for the
//! backward pass. `backward` walks the tape from a scalar root toward the
//! leaves, skipping nodes that no gradient reached.

use super::kernels::{self, ConvDims};
use super::tensor::Tensor;
use crate::error::{RedError, Result};

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Conv1d {
        x: Var,
        w: Var,
        b: Var,
        dims: ConvDims,
    },
    ConvTranspose1d {
        x: Var,
        w: Var,
        b: Var,
        dims: ConvDims,
    },
    MaxPool {
        x: Var,
        argmax: Vec<usize>,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
        batch_stats: bool,
    },
    Dense {
        x: Var,
        w: Var,
        b: Var,
    },
    Relu(Var),
    Sigmoid(Var),
    Reshape(Var),
    CropPad {
        x: Var,
        offset: isize,
    },
    SoftmaxCe {
        logits: Var,
        probs: Vec<f64>,
        labels: Vec<usize>,
    },
    Mse {
        a: Var,
        b: Var,
    },
    CenterLoss {
        z: Var,
        centers: Var,
        labels: Vec<usize>,
    },
    WeightedSum(Vec<(Var, f64)>),
    Project {
        x: Var,
        weights: Vec<f64>,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Batch statistics produced by a training-mode batch norm.
#[derive(Debug, Clone)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    /// Biased (population) variance over batch and time.
    pub var: Vec<f64>,
    /// Number of values each channel statistic was computed from.
    pub count: usize,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
}

fn require_rank(op: &'static str, t: &Tensor, rank: usize) -> Result<()> {
    if t.rank() != rank {
        return Err(RedError::shape(
            op,
            format!("expected rank {rank}, got shape {:?}", t.shape()),
        ));
    }
    Ok(())
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

    fn push(&mut self, name: &str, value: Tensor, op: Op, requires_grad: bool) -> Result<Var> {
        value.ensure_finite(name)?;
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        self.grads.push(None);
        Ok(Var(self.nodes.len() - 1))
    }

    fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Adds an input. Gradients are tracked iff `tensor.requires_grad()`.
    pub fn leaf(&mut self, tensor: Tensor) -> Result<Var> {
        let rg = tensor.requires_grad();
        self.push("leaf", tensor, Op::Leaf, rg)
    }

    /// Adds an input that never receives a gradient.
    pub fn constant(&mut self, tensor: Tensor) -> Result<Var> {
        self.push("constant", tensor, Op::Leaf, false)
    }

    /// Copies `v` into a new constant, cutting the gradient path.
    pub fn detach(&mut self, v: Var) -> Result<Var> {
        let mut t = self.nodes[v.0].value.clone();
        t.zero_grad();
        self.constant(t)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Gradient accumulated by the last [`Graph::backward`], if any reached `v`.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads[v.0].as_deref()
    }

    /// Strided valid 1-D convolution. `x: [B, C_in, L]`, `w: [C_out, C_in, K]`, `b: [C_out]`.
    pub fn conv1d(&mut self, x: Var, w: Var, b: Var, stride: usize) -> Result<Var> {
        let (xt, wt, bt) = (self.value(x), self.value(w), self.value(b));
        require_rank("conv1d", xt, 3)?;
        require_rank("conv1d", wt, 3)?;
        let (batch, c_in, len_in) = (xt.shape()[0], xt.shape()[1], xt.shape()[2]);
        let (c_out, wc, kernel) = (wt.shape()[0], wt.shape()[1], wt.shape()[2]);
        if wc != c_in || bt.shape() != [c_out] || stride == 0 {
            return Err(RedError::shape(
                "conv1d",
                format!("x {:?}, w {:?}, b {:?}, stride {stride}", xt.shape(), wt.shape(), bt.shape()),
            ));
        }
        if len_in < kernel {
            return Err(RedError::Architecture {
                stage: 0,
                detail: format!("conv1d input length {len_in} shorter than kernel {kernel}"),
            });
        }
        let dims = ConvDims {
            batch,
            c_in,
            c_out,
            kernel,
            stride,
            len_in,
        };
        let y = kernels::conv1d_forward(&dims, xt.data(), wt.data(), bt.data());
        let out = Tensor::new(&[batch, c_out, dims.conv_len_out()], y)?;
        let rg = self.any_grad(&[x, w, b]);
        self.push("conv1d", out, Op::Conv1d { x, w, b, dims }, rg)
    }

    /// Transposed 1-D convolution. `x: [B, C_in, L]`, `w: [C_in, C_out, K]`, `b: [C_out]`;
    /// output length `(L - 1) * stride + K`.
    pub fn conv_transpose1d(&mut self, x: Var, w: Var, b: Var, stride: usize) -> Result<Var> {
        let (xt, wt, bt) = (self.value(x), self.value(w), self.value(b));
        require_rank("conv_transpose1d", xt, 3)?;
        require_rank("conv_transpose1d", wt, 3)?;
        let (batch, c_in, len_in) = (xt.shape()[0], xt.shape()[1], xt.shape()[2]);
        let (wc, c_out, kernel) = (wt.shape()[0], wt.shape()[1], wt.shape()[2]);
        if wc != c_in || bt.shape() != [c_out] || stride == 0 {
            return Err(RedError::shape(
                "conv_transpose1d",
                format!("x {:?}, w {:?}, b {:?}, stride {stride}", xt.shape(), wt.shape(), bt.shape()),
            ));
        }
        let dims = ConvDims {
            batch,
            c_in,
            c_out,
            kernel,
            stride,
            len_in,
        };
        let y = kernels::conv_transpose1d_forward(&dims, xt.data(), wt.data(), bt.data());
        let out = Tensor::new(&[batch, c_out, dims.transpose_len_out()], y)?;
        let rg = self.any_grad(&[x, w, b]);
        self.push("conv_transpose1d", out, Op::ConvTranspose1d { x, w, b, dims }, rg)
    }

    /// Non-overlapping max pool over the last axis with stride equal to `window`.
    pub fn maxpool1d(&mut self, x: Var, window: usize) -> Result<Var> {
        let xt = self.value(x);
        let shape = xt.shape().to_vec();
        let len = *shape.last().unwrap();
        if window == 0 || len < window {
            return Err(RedError::Architecture {
                stage: 0,
                detail: format!("maxpool window {window} exceeds length {len}"),
            });
        }
        let rows = xt.len() / len;
        let (y, argmax) = kernels::maxpool_forward(rows, len, window, xt.data());
        let mut out_shape = shape;
        *out_shape.last_mut().unwrap() = len / window;
        let out = Tensor::new(&out_shape, y)?;
        let rg = self.any_grad(&[x]);
        self.push("maxpool1d", out, Op::MaxPool { x, argmax }, rg)
    }

    /// Batch norm with batch statistics over `[B, C, L]`. Returns the statistics
    /// so the caller can maintain running estimates.
    pub fn batchnorm_train(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<(Var, BatchStats)> {
        let (batch, channels, len) = self.bn_dims(x, gamma, beta)?;
        if batch * len < 2 {
            return Err(RedError::InvalidArgument(format!(
                "batch norm needs at least 2 values per channel in train mode, got {}",
                batch * len
            )));
        }
        let (mean, var) = kernels::channel_mean_var(batch, channels, len, self.value(x).data());
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let v = self.bn_apply(x, gamma, beta, &mean, inv_std, true)?;
        Ok((
            v,
            BatchStats {
                mean,
                var,
                count: batch * len,
            },
        ))
    }

    /// Batch norm with fixed (running) statistics.
    pub fn batchnorm_eval(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        running_mean: &[f64],
        running_var: &[f64],
        eps: f64,
    ) -> Result<Var> {
        let (_, channels, _) = self.bn_dims(x, gamma, beta)?;
        if running_mean.len() != channels || running_var.len() != channels {
            return Err(RedError::shape("batchnorm", "running statistics length"));
        }
        let inv_std: Vec<f64> = running_var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        self.bn_apply(x, gamma, beta, running_mean, inv_std, false)
    }

    fn bn_dims(&self, x: Var, gamma: Var, beta: Var) -> Result<(usize, usize, usize)> {
        let xt = self.value(x);
        require_rank("batchnorm", xt, 3)?;
        let (b, c, l) = (xt.shape()[0], xt.shape()[1], xt.shape()[2]);
        if self.shape(gamma) != [c] || self.shape(beta) != [c] {
            return Err(RedError::shape("batchnorm", "gamma/beta must have one value per channel"));
        }
        Ok((b, c, l))
    }

    fn bn_apply(&mut self, x: Var, gamma: Var, beta: Var, mean: &[f64], inv_std: Vec<f64>, batch_stats: bool) -> Result<Var> {
        let xt = self.value(x);
        let shape = xt.shape().to_vec();
        let (channels, len) = (shape[1], shape[2]);
        let g = self.value(gamma).data();
        let be = self.value(beta).data();
        let mut xhat = vec![0.0; xt.len()];
        let mut y = vec![0.0; xt.len()];
        for (r, (row, (hrow, yrow))) in xt
            .data()
            .chunks(len)
            .zip(xhat.chunks_mut(len).zip(y.chunks_mut(len)))
            .enumerate()
        {
            let c = r % channels;
            for ((v, h), o) in row.iter().zip(hrow.iter_mut()).zip(yrow.iter_mut()) {
                *h = (v - mean[c]) * inv_std[c];
                *o = g[c] * *h + be[c];
            }
        }
        let out = Tensor::new(&shape, y)?;
        let rg = self.any_grad(&[x, gamma, beta]);
        self.push(
            "batchnorm",
            out,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                batch_stats,
            },
            rg,
        )
    }

    /// `y = x Wᵀ + b` for `x: [B, N]`, `W: [M, N]`, `b: [M]`.
    pub fn dense(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (xt, wt, bt) = (self.value(x), self.value(w), self.value(b));
        require_rank("dense", xt, 2)?;
        require_rank("dense", wt, 2)?;
        let (batch, n) = (xt.shape()[0], xt.shape()[1]);
        let m = wt.shape()[0];
        if wt.shape()[1] != n || bt.shape() != [m] {
            return Err(RedError::shape(
                "dense",
                format!("x {:?}, W {:?}, b {:?}", xt.shape(), wt.shape(), bt.shape()),
            ));
        }
        let mut y = Vec::with_capacity(batch * m);
        for _ in 0..batch {
            y.extend_from_slice(bt.data());
        }
        kernels::gemm(batch, n, m, xt.data(), (n, 1), wt.data(), (1, n), 1.0, &mut y);
        let out = Tensor::new(&[batch, m], y)?;
        let rg = self.any_grad(&[x, w, b]);
        self.push("dense", out, Op::Dense { x, w, b }, rg)
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let xt = self.value(x);
        let y = xt.data().iter().map(|&v| v.max(0.0)).collect();
        let out = Tensor::new(xt.shape(), y)?;
        let rg = self.any_grad(&[x]);
        self.push("relu", out, Op::Relu(x), rg)
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        let xt = self.value(x);
        let y = xt.data().iter().map(|&v| sigmoid(v)).collect();
        let out = Tensor::new(xt.shape(), y)?;
        let rg = self.any_grad(&[x]);
        self.push("sigmoid", out, Op::Sigmoid(x), rg)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).clone().reshape(shape)?;
        let rg = self.any_grad(&[x]);
        self.push("reshape", out, Op::Reshape(x), rg)
    }

    /// Maps the last axis of `[B, C, L_in]` to `len`: centered crop when longer,
    /// symmetric zero padding when shorter (odd remainder goes to the right).
    pub fn crop_or_pad(&mut self, x: Var, len: usize) -> Result<Var> {
        let xt = self.value(x);
        require_rank("crop_or_pad", xt, 3)?;
        let (b, c, l) = (xt.shape()[0], xt.shape()[1], xt.shape()[2]);
        // out[t] = in[t + offset]
        let offset = if l >= len {
            ((l - len) / 2) as isize
        } else {
            -(((len - l) / 2) as isize)
        };
        let mut y = vec![0.0; b * c * len];
        for (row_in, row_out) in xt.data().chunks(l).zip(y.chunks_mut(len)) {
            for (t, o) in row_out.iter_mut().enumerate() {
                let s = t as isize + offset;
                if s >= 0 && (s as usize) < l {
                    *o = row_in[s as usize];
                }
            }
        }
        let out = Tensor::new(&[b, c, len], y)?;
        let rg = self.any_grad(&[x]);
        self.push("crop_or_pad", out, Op::CropPad { x, offset }, rg)
    }

    /// Mean softmax cross-entropy of `logits: [B, K]` against class indices.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let lt = self.value(logits);
        require_rank("softmax_cross_entropy", lt, 2)?;
        let (batch, k) = (lt.shape()[0], lt.shape()[1]);
        if labels.len() != batch {
            return Err(RedError::shape("softmax_cross_entropy", "one label per row"));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
            return Err(RedError::LabelOutOfRange { label: bad, classes: k });
        }
        let mut probs = vec![0.0; batch * k];
        let mut loss = 0.0;
        for ((row, prow), &label) in lt.data().chunks(k).zip(probs.chunks_mut(k)).zip(labels) {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for (p, &v) in prow.iter_mut().zip(row) {
                *p = (v - max).exp();
                sum += *p;
            }
            for p in prow.iter_mut() {
                *p /= sum;
            }
            loss += sum.ln() - (row[label] - max);
        }
        let out = Tensor::scalar(loss / batch as f64);
        let rg = self.any_grad(&[logits]);
        self.push(
            "softmax_cross_entropy",
            out,
            Op::SoftmaxCe {
                logits,
                probs,
                labels: labels.to_vec(),
            },
            rg,
        )
    }

    /// Mean squared error over all elements.
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var> {
        let (at, bt) = (self.value(a), self.value(b));
        if at.shape() != bt.shape() {
            return Err(RedError::shape("mse", format!("{:?} vs {:?}", at.shape(), bt.shape())));
        }
        let n = at.len() as f64;
        let s: f64 = at.data().iter().zip(bt.data()).map(|(x, y)| (x - y).powi(2)).sum();
        let rg = self.any_grad(&[a, b]);
        self.push("mse", Tensor::scalar(s / n), Op::Mse { a, b }, rg)
    }

    /// `½ · mean_i ‖z_i − c_{label_i}‖²` for `z: [B, t]`, `centers: [K, t]`.
    pub fn center_loss(&mut self, z: Var, centers: Var, labels: &[usize]) -> Result<Var> {
        let (zt, ct) = (self.value(z), self.value(centers));
        require_rank("center_loss", zt, 2)?;
        require_rank("center_loss", ct, 2)?;
        let (batch, dim) = (zt.shape()[0], zt.shape()[1]);
        let k = ct.shape()[0];
        if ct.shape()[1] != dim || labels.len() != batch {
            return Err(RedError::shape(
                "center_loss",
                format!("z {:?}, centers {:?}, {} labels", zt.shape(), ct.shape(), labels.len()),
            ));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
            return Err(RedError::LabelOutOfRange { label: bad, classes: k });
        }
        let mut s = 0.0;
        for (row, &label) in zt.data().chunks(dim).zip(labels) {
            let c = &ct.data()[label * dim..(label + 1) * dim];
            s += row.iter().zip(c).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
        }
        let out = Tensor::scalar(0.5 * s / batch as f64);
        let rg = self.any_grad(&[z, centers]);
        self.push(
            "center_loss",
            out,
            Op::CenterLoss {
                z,
                centers,
                labels: labels.to_vec(),
            },
            rg,
        )
    }

    /// `Σ w_i · v_i` over scalar nodes.
    pub fn weighted_sum(&mut self, terms: &[(Var, f64)]) -> Result<Var> {
        let mut s = 0.0;
        for &(v, w) in terms {
            let t = self.value(v);
            if t.len() != 1 {
                return Err(RedError::shape("weighted_sum", "terms must be scalars"));
            }
            s += w * t.data()[0];
        }
        let vars: Vec<Var> = terms.iter().map(|t| t.0).collect();
        let rg = self.any_grad(&vars);
        self.push("weighted_sum", Tensor::scalar(s), Op::WeightedSum(terms.to_vec()), rg)
    }

    /// `Σ_i weights_i · x_i`, a scalar probe of an arbitrary tensor.
    pub fn project(&mut self, x: Var, weights: &[f64]) -> Result<Var> {
        let xt = self.value(x);
        if xt.len() != weights.len() {
            return Err(RedError::shape("project", "weights must match tensor size"));
        }
        let s = xt.data().iter().zip(weights).map(|(a, b)| a * b).sum();
        let rg = self.any_grad(&[x]);
        self.push(
            "project",
            Tensor::scalar(s),
            Op::Project {
                x,
                weights: weights.to_vec(),
            },
            rg,
        )
    }

    /// Reverse pass from a scalar `root`. Clears gradients from any earlier pass.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        if self.value(root).len() != 1 {
            return Err(RedError::shape("backward", "root must be a scalar"));
        }
        for g in &mut self.grads {
            *g = None;
        }
        if !self.nodes[root.0].requires_grad {
            return Ok(());
        }
        self.grads[root.0] = Some(vec![1.0]);
        for i in (0..=root.0).rev() {
            let Some(dy) = self.grads[i].take() else {
                continue;
            };
            self.backprop_node(i, &dy)?;
            self.grads[i] = Some(dy);
        }
        Ok(())
    }

    fn accumulate(&mut self, v: Var, delta: Vec<f64>) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut self.grads[v.0] {
            Some(g) => {
                for (a, d) in g.iter_mut().zip(delta) {
                    *a += d;
                }
            }
            slot @ None => *slot = Some(delta),
        }
    }

    fn backprop_node(&mut self, i: usize, dy: &[f64]) -> Result<()> {
        let mut pending: Vec<(Var, Vec<f64>)> = Vec::new();
        let node = &self.nodes[i];
        match &node.op {
            Op::Leaf => {}
            Op::Conv1d { x, w, b, dims } => {
                let (dx, dw, db) =
                    kernels::conv1d_backward(dims, self.value(*x).data(), self.value(*w).data(), dy);
                pending.extend([(*x, dx), (*w, dw), (*b, db)]);
            }
            Op::ConvTranspose1d { x, w, b, dims } => {
                let (dx, dw, db) =
                    kernels::conv_transpose1d_backward(dims, self.value(*x).data(), self.value(*w).data(), dy);
                pending.extend([(*x, dx), (*w, dw), (*b, db)]);
            }
            Op::MaxPool { x, argmax } => {
                let mut dx = vec![0.0; self.value(*x).len()];
                for (&j, &g) in argmax.iter().zip(dy) {
                    dx[j] += g;
                }
                pending.push((*x, dx));
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                batch_stats,
            } => {
                let shape = self.shape(*x);
                let (batch, channels, len) = (shape[0], shape[1], shape[2]);
                let g = self.value(*gamma).data();
                let mut dgamma = vec![0.0; channels];
                let mut dbeta = vec![0.0; channels];
                for (r, (dyr, hr)) in dy.chunks(len).zip(xhat.chunks(len)).enumerate() {
                    let c = r % channels;
                    for (d, h) in dyr.iter().zip(hr) {
                        dgamma[c] += d * h;
                        dbeta[c] += d;
                    }
                }
                let mut dx = vec![0.0; dy.len()];
                if *batch_stats {
                    // dxhat = dy·γ;  Σdxhat = γ·dβ;  Σ dxhat·xhat = γ·dγ
                    let n = (batch * len) as f64;
                    for (r, ((dxr, dyr), hr)) in dx.chunks_mut(len).zip(dy.chunks(len)).zip(xhat.chunks(len)).enumerate() {
                        let c = r % channels;
                        let k = g[c] * inv_std[c] / n;
                        for ((o, d), h) in dxr.iter_mut().zip(dyr).zip(hr) {
                            *o = k * (n * d - dbeta[c] - h * dgamma[c]);
                        }
                    }
                } else {
                    for (r, (dxr, dyr)) in dx.chunks_mut(len).zip(dy.chunks(len)).enumerate() {
                        let c = r % channels;
                        for (o, d) in dxr.iter_mut().zip(dyr) {
                            *o = d * g[c] * inv_std[c];
                        }
                    }
                }
                pending.extend([(*x, dx), (*gamma, dgamma), (*beta, dbeta)]);
            }
            Op::Dense { x, w, b } => {
                let (xt, wt) = (self.value(*x), self.value(*w));
                let (batch, n) = (xt.shape()[0], xt.shape()[1]);
                let m = wt.shape()[0];
                let mut dx = vec![0.0; batch * n];
                let mut dw = vec![0.0; m * n];
                let mut db = vec![0.0; m];
                kernels::gemm(batch, m, n, dy, (m, 1), wt.data(), (n, 1), 0.0, &mut dx);
                kernels::gemm(m, batch, n, dy, (1, m), xt.data(), (n, 1), 0.0, &mut dw);
                for row in dy.chunks(m) {
                    for (a, d) in db.iter_mut().zip(row) {
                        *a += d;
                    }
                }
                pending.extend([(*x, dx), (*w, dw), (*b, db)]);
            }
            Op::Relu(x) => {
                let dx = self
                    .value(*x)
                    .data()
                    .iter()
                    .zip(dy)
                    .map(|(&v, &d)| if v > 0.0 { d } else { 0.0 })
                    .collect();
                pending.push((*x, dx));
            }
            Op::Sigmoid(x) => {
                let dx = node.value.data().iter().zip(dy).map(|(&s, &d)| d * s * (1.0 - s)).collect();
                pending.push((*x, dx));
            }
            Op::Reshape(x) => pending.push((*x, dy.to_vec())),
            Op::CropPad { x, offset } => {
                let xt = self.value(*x);
                let l = xt.shape()[2];
                let len = node.value.shape()[2];
                let mut dx = vec![0.0; xt.len()];
                for (row_out, row_in) in dy.chunks(len).zip(dx.chunks_mut(l)) {
                    for (t, g) in row_out.iter().enumerate() {
                        let s = t as isize + offset;
                        if s >= 0 && (s as usize) < l {
                            row_in[s as usize] += g;
                        }
                    }
                }
                pending.push((*x, dx));
            }
            Op::SoftmaxCe { logits, probs, labels } => {
                let k = self.shape(*logits)[1];
                let batch = labels.len() as f64;
                let mut dl = probs.clone();
                for (row, &label) in dl.chunks_mut(k).zip(labels) {
                    row[label] -= 1.0;
                    for v in row.iter_mut() {
                        *v *= dy[0] / batch;
                    }
                }
                pending.push((*logits, dl));
            }
            Op::Mse { a, b } => {
                let (at, bt) = (self.value(*a), self.value(*b));
                let scale = 2.0 * dy[0] / at.len() as f64;
                let da: Vec<f64> = at.data().iter().zip(bt.data()).map(|(x, y)| scale * (x - y)).collect();
                let db = da.iter().map(|v| -v).collect();
                pending.extend([(*a, da), (*b, db)]);
            }
            Op::CenterLoss { z, centers, labels } => {
                let (zt, ct) = (self.value(*z), self.value(*centers));
                let dim = zt.shape()[1];
                let scale = dy[0] / labels.len() as f64;
                let mut dz = vec![0.0; zt.len()];
                let mut dc = vec![0.0; ct.len()];
                for ((row, drow), &label) in zt.data().chunks(dim).zip(dz.chunks_mut(dim)).zip(labels) {
                    let c = &ct.data()[label * dim..(label + 1) * dim];
                    let dcr = &mut dc[label * dim..(label + 1) * dim];
                    for (((zv, cv), dzv), dcv) in row.iter().zip(c).zip(drow.iter_mut()).zip(dcr.iter_mut()) {
                        *dzv = scale * (zv - cv);
                        *dcv -= scale * (zv - cv);
                    }
                }
                pending.extend([(*z, dz), (*centers, dc)]);
            }
            Op::WeightedSum(terms) => {
                for &(v, w) in terms {
                    pending.push((v, vec![w * dy[0]]));
                }
            }
            Op::Project { x, weights } => {
                pending.push((*x, weights.iter().map(|w| w * dy[0]).collect()));
            }
        }
        for (v, delta) in pending {
            if delta.iter().any(|d| !d.is_finite()) {
                return Err(RedError::NonFinite(format!("gradient of node {}", v.0)));
            }
            self.accumulate(v, delta);
        }
        Ok(())
    }
}

/// Logistic function, kept strictly inside (0, 1) even where `f64` would round to an endpoint.
pub fn sigmoid(v: f64) -> f64 {
    let s = if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    };
    s.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0)
}
