//! Encoder / decoder / classifier network.
//!
//! Encoder: `depth × [Conv(C, K) → ReLU → BatchNorm → MaxPool(w)]` over a
//! 2-channel (I, Q) record. Its flattened output is the latent that both the
//! decoder and the classifier consume.
//!
//! Decoder: `depth × [ConvTranspose(C, k_d, stride w) → ReLU → BatchNorm]`,
//! then `Conv(2, k_d)`, a center crop or zero pad back to `L`, and a sigmoid.
//!
//! Classifier: `Dense(hidden) → ReLU → Dense(n_classes)`.

use std::fs;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::kernels::{conv_out_len, conv_transpose_out_len};
use crate::autodiff::{BatchStats, Graph, Tensor, Var};
use crate::error::{RedError, Result};
use crate::seed;

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// Which activation serves as the semantic feature for centers and the detector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SemanticTap {
    /// Flattened encoder output.
    #[default]
    Encoder,
    /// Post-ReLU output of the classifier's hidden layer.
    ClassifierHidden,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchitectureConfig {
    pub input_length: usize,
    pub encoder_depth: usize,
    pub conv_channels: usize,
    pub conv_kernel: usize,
    pub pool_window: usize,
    pub decoder_kernel: usize,
    pub classifier_hidden: usize,
    pub n_classes: usize,
    #[serde(default)]
    pub semantic_tap: SemanticTap,
}

/// Temporal length entering and leaving one encoder stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StageShape {
    pub input: usize,
    pub after_conv: usize,
    pub after_pool: usize,
}

impl ArchitectureConfig {
    /// Default layer sizes at the deepest encoder the input length allows.
    pub fn for_input(input_length: usize, n_classes: usize) -> Self {
        let mut cfg = ArchitectureConfig {
            input_length,
            encoder_depth: 0,
            conv_channels: 64,
            conv_kernel: 10,
            pool_window: 4,
            decoder_kernel: 3,
            classifier_hidden: 1024,
            n_classes,
            semantic_tap: SemanticTap::Encoder,
        };
        cfg.encoder_depth = cfg.max_depth();
        cfg
    }

    /// Deepest encoder whose shape chain stays valid.
    pub fn max_depth(&self) -> usize {
        let mut len = self.input_length;
        let mut depth = 0;
        while len >= self.conv_kernel && self.pool_window > 0 && conv_out_len(len, self.conv_kernel, 1) >= self.pool_window {
            len = conv_out_len(len, self.conv_kernel, 1) / self.pool_window;
            depth += 1;
        }
        depth
    }

    /// Shape chain of the encoder; fails naming the first (1-based) stage whose input is too short.
    pub fn encoder_shapes(&self) -> Result<Vec<StageShape>> {
        let mut len = self.input_length;
        let mut out = Vec::with_capacity(self.encoder_depth);
        for stage in 1..=self.encoder_depth {
            if len < self.conv_kernel {
                return Err(RedError::Architecture {
                    stage,
                    detail: format!("length {len} is shorter than conv kernel {}", self.conv_kernel),
                });
            }
            let after_conv = conv_out_len(len, self.conv_kernel, 1);
            if after_conv < self.pool_window {
                return Err(RedError::Architecture {
                    stage,
                    detail: format!("length {after_conv} after conv is shorter than pool window {}", self.pool_window),
                });
            }
            let after_pool = after_conv / self.pool_window;
            out.push(StageShape {
                input: len,
                after_conv,
                after_pool,
            });
            len = after_pool;
        }
        Ok(out)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_classes < 2 {
            return Err(RedError::Config(format!("need at least 2 classes, got {}", self.n_classes)));
        }
        if self.encoder_depth == 0 {
            return Err(RedError::Architecture {
                stage: 0,
                detail: format!("input length {} admits no encoder stage", self.input_length),
            });
        }
        if [self.conv_channels, self.conv_kernel, self.pool_window, self.decoder_kernel, self.classifier_hidden]
            .contains(&0)
        {
            return Err(RedError::Config("layer sizes must be positive".into()));
        }
        self.encoder_shapes().map(|_| ())
    }

    /// Temporal length of the encoder output.
    pub fn latent_length(&self) -> Result<usize> {
        Ok(self.encoder_shapes()?.last().map_or(self.input_length, |s| s.after_pool))
    }

    /// Width of the flattened encoder output.
    pub fn latent_dim(&self) -> Result<usize> {
        Ok(self.conv_channels * self.latent_length()?)
    }

    /// Dimension `t` of the semantic feature.
    pub fn feature_dim(&self) -> Result<usize> {
        match self.semantic_tap {
            SemanticTap::Encoder => self.latent_dim(),
            SemanticTap::ClassifierHidden => Ok(self.classifier_hidden),
        }
    }

    /// Lengths after each decoder transposed conv, then after the output conv (before crop/pad).
    pub fn decoder_lengths(&self) -> Result<Vec<usize>> {
        let mut len = self.latent_length()?;
        let mut out = Vec::with_capacity(self.encoder_depth + 1);
        for _ in 0..self.encoder_depth {
            len = conv_transpose_out_len(len, self.decoder_kernel, self.pool_window);
            out.push(len);
        }
        out.push(conv_out_len(len, self.decoder_kernel, 1));
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormParams {
    pub gamma: Tensor,
    pub beta: Tensor,
    pub running_mean: Tensor,
    pub running_var: Tensor,
}

impl BatchNormParams {
    fn new(channels: usize) -> Self {
        BatchNormParams {
            gamma: Tensor::full(&[channels], 1.0).with_grad(),
            beta: Tensor::zeros(&[channels]).with_grad(),
            running_mean: Tensor::zeros(&[channels]),
            running_var: Tensor::full(&[channels], 1.0),
        }
    }

    fn update_running(&mut self, stats: &BatchStats) {
        let n = stats.count as f64;
        let unbias = if stats.count > 1 { n / (n - 1.0) } else { 1.0 };
        for (r, m) in self.running_mean.data_mut().iter_mut().zip(&stats.mean) {
            *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * m;
        }
        for (r, v) in self.running_var.data_mut().iter_mut().zip(&stats.var) {
            *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * v * unbias;
        }
        self.running_mean.round_to_f32();
        self.running_var.round_to_f32();
    }
}

/// Weight + bias of a conv, transposed conv or dense layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Affine {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Affine {
    fn kaiming(rng: &mut seed::Rng, shape: &[usize], fan_in: usize, out: usize) -> Self {
        let bound = (6.0 / fan_in as f64).sqrt();
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| rng.random_range(-bound..bound) as f32 as f64).collect();
        Affine {
            weight: Tensor::new(shape, data).unwrap().with_grad(),
            bias: Tensor::zeros(&[out]).with_grad(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub conv: Affine,
    pub bn: BatchNormParams,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics in batch norm, gradients tracked for every parameter.
    Train,
    /// Running statistics, no parameter gradients.
    Eval,
}

/// Graph handles produced by one forward pass.
#[derive(Debug, Clone)]
pub struct Forward {
    /// Flattened encoder output `[B, C·ℓ]`.
    pub latent: Var,
    /// Semantic feature `[B, t]` per the configured tap.
    pub feature: Var,
    pub logits: Var,
    /// `[B, 2, L]`, present when decoding was requested.
    pub reconstruction: Option<Var>,
    /// Parameter handles in [`RedModel::trainable_mut`] order.
    pub params: Vec<Var>,
    /// Batch statistics per batch norm (encoder then decoder), train mode only.
    pub batch_stats: Vec<BatchStats>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RedModel {
    pub arch: ArchitectureConfig,
    pub encoder: Vec<Block>,
    pub decoder: Vec<Block>,
    pub decoder_out: Affine,
    pub hidden: Affine,
    pub output: Affine,
}

impl RedModel {
    /// Kaiming-uniform conv/dense weights, zero biases, unit batch-norm scale; deterministic in `seed`.
    pub fn build(arch: ArchitectureConfig, seed: u64) -> Result<Self> {
        arch.validate()?;
        let c = arch.conv_channels;
        let (k, kd) = (arch.conv_kernel, arch.decoder_kernel);
        let mut rng = seed::rng(seed, "init", 0);
        let mut encoder = Vec::new();
        for i in 0..arch.encoder_depth {
            let c_in = if i == 0 { 2 } else { c };
            encoder.push(Block {
                conv: Affine::kaiming(&mut rng, &[c, c_in, k], c_in * k, c),
                bn: BatchNormParams::new(c),
            });
        }
        let decoder = (0..arch.encoder_depth)
            .map(|_| Block {
                conv: Affine::kaiming(&mut rng, &[c, c, kd], c * kd, c),
                bn: BatchNormParams::new(c),
            })
            .collect();
        let decoder_out = Affine::kaiming(&mut rng, &[2, c, kd], c * kd, 2);
        let latent = arch.latent_dim()?;
        let hidden = Affine::kaiming(&mut rng, &[arch.classifier_hidden, latent], latent, arch.classifier_hidden);
        let output = Affine::kaiming(
            &mut rng,
            &[arch.n_classes, arch.classifier_hidden],
            arch.classifier_hidden,
            arch.n_classes,
        );
        Ok(RedModel {
            arch,
            encoder,
            decoder,
            decoder_out,
            hidden,
            output,
        })
    }

    pub fn feature_dim(&self) -> usize {
        self.arch.feature_dim().expect("validated at build")
    }

    /// Trainable tensors in a fixed order.
    pub fn trainable_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        for b in self.encoder.iter_mut().chain(self.decoder.iter_mut()) {
            out.extend([&mut b.conv.weight, &mut b.conv.bias, &mut b.bn.gamma, &mut b.bn.beta]);
        }
        for a in [&mut self.decoder_out, &mut self.hidden, &mut self.output] {
            out.extend([&mut a.weight, &mut a.bias]);
        }
        out
    }

    /// Every tensor that defines the model, trainable or not, with stable names.
    pub fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (prefix, blocks) in [("enc", &self.encoder), ("dec", &self.decoder)] {
            for (i, b) in blocks.iter().enumerate() {
                out.push((format!("{prefix}.{i}.conv.weight"), &b.conv.weight));
                out.push((format!("{prefix}.{i}.conv.bias"), &b.conv.bias));
                out.push((format!("{prefix}.{i}.bn.gamma"), &b.bn.gamma));
                out.push((format!("{prefix}.{i}.bn.beta"), &b.bn.beta));
                out.push((format!("{prefix}.{i}.bn.running_mean"), &b.bn.running_mean));
                out.push((format!("{prefix}.{i}.bn.running_var"), &b.bn.running_var));
            }
        }
        for (name, a) in [("dec.out", &self.decoder_out), ("cls.hidden", &self.hidden), ("cls.output", &self.output)] {
            out.push((format!("{name}.weight"), &a.weight));
            out.push((format!("{name}.bias"), &a.bias));
        }
        out
    }

    fn named_tensors_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = Vec::new();
        for (prefix, blocks) in [("enc", &mut self.encoder), ("dec", &mut self.decoder)] {
            for (i, b) in blocks.iter_mut().enumerate() {
                out.push((format!("{prefix}.{i}.conv.weight"), &mut b.conv.weight));
                out.push((format!("{prefix}.{i}.conv.bias"), &mut b.conv.bias));
                out.push((format!("{prefix}.{i}.bn.gamma"), &mut b.bn.gamma));
                out.push((format!("{prefix}.{i}.bn.beta"), &mut b.bn.beta));
                out.push((format!("{prefix}.{i}.bn.running_mean"), &mut b.bn.running_mean));
                out.push((format!("{prefix}.{i}.bn.running_var"), &mut b.bn.running_var));
            }
        }
        for (name, a) in [
            ("dec.out", &mut self.decoder_out),
            ("cls.hidden", &mut self.hidden),
            ("cls.output", &mut self.output),
        ] {
            out.push((format!("{name}.weight"), &mut a.weight));
            out.push((format!("{name}.bias"), &mut a.bias));
        }
        out
    }

    fn check_input(&self, shape: &[usize]) -> Result<()> {
        if shape.len() != 3 || shape[1] != 2 || shape[2] != self.arch.input_length {
            return Err(RedError::shape(
                "model input",
                format!("expected [B, 2, {}], got {shape:?}", self.arch.input_length),
            ));
        }
        Ok(())
    }

    fn bn(&self, g: &mut Graph, x: Var, bn: &BatchNormParams, gamma: Var, beta: Var, mode: Mode, stats: &mut Vec<BatchStats>) -> Result<Var> {
        match mode {
            Mode::Train => {
                let (y, s) = g.batchnorm_train(x, gamma, beta, BN_EPS)?;
                stats.push(s);
                Ok(y)
            }
            Mode::Eval => g.batchnorm_eval(x, gamma, beta, bn.running_mean.data(), bn.running_var.data(), BN_EPS),
        }
    }

    /// Records a full forward pass on `g`. `x` must be `[B, 2, L]`.
    pub fn forward(&self, g: &mut Graph, x: Var, mode: Mode, decode: bool) -> Result<Forward> {
        self.check_input(g.shape(x))?;
        let batch = g.shape(x)[0];
        let mut params = Vec::new();
        let mut stats = Vec::new();
        let mut add = |g: &mut Graph, t: &Tensor| -> Result<Var> {
            let v = match mode {
                Mode::Train => g.leaf(t.clone())?,
                Mode::Eval => g.constant(t.clone())?,
            };
            params.push(v);
            Ok(v)
        };

        let mut enc_handles = Vec::new();
        for b in self.encoder.iter() {
            let h = [add(g, &b.conv.weight)?, add(g, &b.conv.bias)?, add(g, &b.bn.gamma)?, add(g, &b.bn.beta)?];
            enc_handles.push(h);
        }
        let mut dec_handles = Vec::new();
        for b in self.decoder.iter() {
            let h = [add(g, &b.conv.weight)?, add(g, &b.conv.bias)?, add(g, &b.bn.gamma)?, add(g, &b.bn.beta)?];
            dec_handles.push(h);
        }
        let dec_out = [add(g, &self.decoder_out.weight)?, add(g, &self.decoder_out.bias)?];
        let hid = [add(g, &self.hidden.weight)?, add(g, &self.hidden.bias)?];
        let out = [add(g, &self.output.weight)?, add(g, &self.output.bias)?];

        let mut h = x;
        for (stage, (b, p)) in self.encoder.iter().zip(&enc_handles).enumerate() {
            h = g.conv1d(h, p[0], p[1], 1).map_err(|e| restage(e, stage + 1))?;
            h = g.relu(h)?;
            h = self.bn(g, h, &b.bn, p[2], p[3], mode, &mut stats)?;
            h = g.maxpool1d(h, self.arch.pool_window).map_err(|e| restage(e, stage + 1))?;
        }
        let enc_shape = g.shape(h).to_vec();
        let latent = g.reshape(h, &[batch, enc_shape[1] * enc_shape[2]])?;

        let reconstruction = if decode {
            let mut d = h;
            for (b, p) in self.decoder.iter().zip(&dec_handles) {
                d = g.conv_transpose1d(d, p[0], p[1], self.arch.pool_window)?;
                d = g.relu(d)?;
                d = self.bn(g, d, &b.bn, p[2], p[3], mode, &mut stats)?;
            }
            d = g.conv1d(d, dec_out[0], dec_out[1], 1)?;
            d = g.crop_or_pad(d, self.arch.input_length)?;
            Some(g.sigmoid(d)?)
        } else {
            None
        };

        let hidden = g.dense(latent, hid[0], hid[1])?;
        let hidden = g.relu(hidden)?;
        let logits = g.dense(hidden, out[0], out[1])?;
        let feature = match self.arch.semantic_tap {
            SemanticTap::Encoder => latent,
            SemanticTap::ClassifierHidden => hidden,
        };
        Ok(Forward {
            latent,
            feature,
            logits,
            reconstruction,
            params,
            batch_stats: stats,
        })
    }

    /// Folds train-mode batch statistics into the running estimates.
    pub fn update_running_stats(&mut self, stats: &[BatchStats]) -> Result<()> {
        let n_enc = self.encoder.len();
        let total = n_enc + self.decoder.len();
        // decoder statistics are absent when the decoder was skipped
        if stats.len() != total && stats.len() != n_enc {
            return Err(RedError::shape("running stats", format!("{} statistics for {total} batch norms", stats.len())));
        }
        let bns = self
            .encoder
            .iter_mut()
            .chain(self.decoder.iter_mut())
            .map(|b| &mut b.bn);
        for (bn, s) in bns.into_iter().zip(stats) {
            bn.update_running(s);
        }
        Ok(())
    }

    /// Semantic features `[B, t]` of a `[B, 2, L]` batch, eval mode.
    pub fn encode(&self, x: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let xv = g.constant(x.clone())?;
        let f = self.forward(&mut g, xv, Mode::Eval, false)?;
        Ok(g.value(f.feature).clone())
    }

    /// Flattened encoder output `[B, C·ℓ]`, eval mode.
    pub fn encode_latent(&self, x: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let xv = g.constant(x.clone())?;
        let f = self.forward(&mut g, xv, Mode::Eval, false)?;
        Ok(g.value(f.latent).clone())
    }

    fn check_latent(&self, z: &Tensor) -> Result<usize> {
        let dim = self.arch.latent_dim()?;
        if z.rank() != 2 || z.shape()[1] != dim {
            return Err(RedError::shape("latent", format!("expected [B, {dim}], got {:?}", z.shape())));
        }
        Ok(z.shape()[0])
    }

    /// Reconstruction `[B, 2, L]` from flattened encoder outputs, eval mode.
    pub fn decode(&self, z: &Tensor) -> Result<Tensor> {
        let batch = self.check_latent(z)?;
        let mut g = Graph::new();
        let zl = self.arch.latent_length()?;
        let mut d = g.constant(z.clone().reshape(&[batch, self.arch.conv_channels, zl])?)?;
        for b in &self.decoder {
            let w = g.constant(b.conv.weight.clone())?;
            let bias = g.constant(b.conv.bias.clone())?;
            let gamma = g.constant(b.bn.gamma.clone())?;
            let beta = g.constant(b.bn.beta.clone())?;
            d = g.conv_transpose1d(d, w, bias, self.arch.pool_window)?;
            d = g.relu(d)?;
            d = g.batchnorm_eval(d, gamma, beta, b.bn.running_mean.data(), b.bn.running_var.data(), BN_EPS)?;
        }
        let w = g.constant(self.decoder_out.weight.clone())?;
        let bias = g.constant(self.decoder_out.bias.clone())?;
        d = g.conv1d(d, w, bias, 1)?;
        d = g.crop_or_pad(d, self.arch.input_length)?;
        d = g.sigmoid(d)?;
        Ok(g.value(d).clone())
    }

    /// Raw logits `[B, n_classes]` from flattened encoder outputs.
    pub fn classify(&self, z: &Tensor) -> Result<Tensor> {
        self.check_latent(z)?;
        let mut g = Graph::new();
        let zv = g.constant(z.clone())?;
        let w1 = g.constant(self.hidden.weight.clone())?;
        let b1 = g.constant(self.hidden.bias.clone())?;
        let w2 = g.constant(self.output.weight.clone())?;
        let b2 = g.constant(self.output.bias.clone())?;
        let h = g.dense(zv, w1, b1)?;
        let h = g.relu(h)?;
        let y = g.dense(h, w2, b2)?;
        Ok(g.value(y).clone())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(WEIGHTS_MAGIC);
        put_u32(&mut out, WEIGHTS_VERSION);
        let a = &self.arch;
        for v in [
            a.input_length,
            a.encoder_depth,
            a.conv_channels,
            a.conv_kernel,
            a.pool_window,
            a.decoder_kernel,
            a.classifier_hidden,
            a.n_classes,
        ] {
            put_u32(&mut out, v as u32);
        }
        put_u32(
            &mut out,
            match a.semantic_tap {
                SemanticTap::Encoder => 0,
                SemanticTap::ClassifierHidden => 1,
            },
        );
        let named = self.named_tensors();
        put_u32(&mut out, named.len() as u32);
        for (name, t) in named {
            put_tensor(&mut out, &name, t);
        }
        out
    }

    /// Parses a weights blob, returning the model and the number of bytes consumed.
    pub fn from_bytes(buf: &[u8]) -> Result<(Self, usize)> {
        let mut r = ByteReader::new(buf);
        if r.bytes(4)? != WEIGHTS_MAGIC {
            return Err(RedError::Format("not a REDW weights file".into()));
        }
        let version = r.u32()?;
        if version != WEIGHTS_VERSION {
            return Err(RedError::Format(format!("unsupported weights version {version}")));
        }
        let mut f = [0usize; 8];
        for v in &mut f {
            *v = r.u32()? as usize;
        }
        let semantic_tap = match r.u32()? {
            0 => SemanticTap::Encoder,
            1 => SemanticTap::ClassifierHidden,
            t => return Err(RedError::Format(format!("unknown semantic tap {t}"))),
        };
        let arch = ArchitectureConfig {
            input_length: f[0],
            encoder_depth: f[1],
            conv_channels: f[2],
            conv_kernel: f[3],
            pool_window: f[4],
            decoder_kernel: f[5],
            classifier_hidden: f[6],
            n_classes: f[7],
            semantic_tap,
        };
        let mut model = RedModel::build(arch, 0)?;
        let n = r.u32()? as usize;
        let mut slots = model.named_tensors_mut();
        if n != slots.len() {
            return Err(RedError::Format(format!("expected {} tensors, found {n}", slots.len())));
        }
        for (name, slot) in slots.iter_mut() {
            let (got_name, t) = r.tensor()?;
            if &got_name != name || t.shape() != slot.shape() {
                return Err(RedError::Format(format!(
                    "tensor `{got_name}` {:?} does not match `{name}` {:?}",
                    t.shape(),
                    slot.shape()
                )));
            }
            slot.data_mut().copy_from_slice(t.data());
        }
        Ok((model, r.pos))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let buf = fs::read(path)?;
        let (m, used) = Self::from_bytes(&buf)?;
        if used != buf.len() {
            return Err(RedError::Format(format!("{} trailing bytes after weights", buf.len() - used)));
        }
        Ok(m)
    }
}

fn restage(e: RedError, stage: usize) -> RedError {
    match e {
        RedError::Architecture { detail, .. } => RedError::Architecture { stage, detail },
        other => other,
    }
}

const WEIGHTS_MAGIC: &[u8; 4] = b"REDW";
const WEIGHTS_VERSION: u32 = 1;

pub(crate) fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

/// Name length + bytes, rank, dims, then f32 data.
pub(crate) fn put_tensor(out: &mut Vec<u8>, name: &str, t: &Tensor) {
    put_u32(out, name.len() as u32);
    out.extend_from_slice(name.as_bytes());
    put_u32(out, t.rank() as u32);
    for &d in t.shape() {
        put_u32(out, d as u32);
    }
    for &v in t.data() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
}

pub(crate) struct ByteReader<'a> {
    buf: &'a [u8],
    pub(crate) pos: usize,
}

impl<'a> ByteReader<'a> {
    pub(crate) fn new(buf: &'a [u8]) -> Self {
        ByteReader { buf, pos: 0 }
    }

    pub(crate) fn bytes(&mut self, n: usize) -> Result<&'a [u8]> {
        let s = self
            .buf
            .get(self.pos..self.pos + n)
            .ok_or_else(|| RedError::Format(format!("truncated at byte {}", self.pos)))?;
        self.pos += n;
        Ok(s)
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes(4)?.try_into().unwrap()))
    }

    pub(crate) fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.bytes(4)?.try_into().unwrap()))
    }

    pub(crate) fn is_done(&self) -> bool {
        self.pos == self.buf.len()
    }

    pub(crate) fn tensor(&mut self) -> Result<(String, Tensor)> {
        let name_len = self.u32()? as usize;
        let name = String::from_utf8(self.bytes(name_len)?.to_vec())
            .map_err(|_| RedError::Format("tensor name is not UTF-8".into()))?;
        let rank = self.u32()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(self.u32()? as usize);
        }
        let n: usize = shape.iter().product();
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            data.push(self.f32()? as f64);
        }
        Ok((name, Tensor::new(&shape, data)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_arch() -> ArchitectureConfig {
        ArchitectureConfig {
            conv_channels: 4,
            classifier_hidden: 8,
            ..ArchitectureConfig::for_input(128, 3)
        }
    }

    #[test]
    fn default_depth_is_deepest_feasible() {
        let a = ArchitectureConfig::for_input(1024, 10);
        assert_eq!(a.encoder_depth, 4);
        assert_eq!(a.latent_length().unwrap(), 1);
        assert_eq!(a.feature_dim().unwrap(), 64);
    }

    #[test]
    fn decoder_output_lengths() {
        let a = ArchitectureConfig::for_input(1024, 10);
        assert_eq!(a.decoder_lengths().unwrap(), vec![3, 11, 43, 171, 169]);
    }

    #[test]
    fn round_trip_bytes() {
        let m = RedModel::build(small_arch(), 3).unwrap();
        let bytes = m.to_bytes();
        let (back, used) = RedModel::from_bytes(&bytes).unwrap();
        assert_eq!(used, bytes.len());
        assert_eq!(back, m);
    }

    #[test]
    fn truncated_weights_rejected() {
        let m = RedModel::build(small_arch(), 3).unwrap();
        let bytes = m.to_bytes();
        assert!(RedModel::from_bytes(&bytes[..bytes.len() - 3]).is_err());
    }
}
