//! Joint training of the denoising autoencoder, classifier and center loss.
//!
//! Each batch is perturbed with AWGN, pushed through the network, and scored
//! with `λ_CE·CE + λ_MSE·MSE(x̂, x_clean) + λ_ML·ML`. The network takes one
//! Adam step on the full composite; the class centers take a separate Adam
//! step on the center loss alone with their own learning rate.

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::autodiff::{AdamState, BatchStats, Graph, Tensor};
use crate::detector::SemanticCenterSet;
use crate::error::{RedError, Result};
use crate::model::{put_tensor, put_u32, ByteReader, Mode, RedModel};
use crate::seed;
use crate::signal::{awgn_perturb, IQDataset, Record, SnrSpec, Split};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub max_epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Learning rate of the center optimizer.
    pub lr_ml: f64,
    pub lambda_ce: f64,
    pub lambda_mse: f64,
    pub lambda_ml: f64,
    pub plateau_patience: usize,
    pub plateau_factor: f64,
    /// Relative improvement a validation loss needs to reset the plateau counter.
    pub plateau_threshold: f64,
    pub train_snr: SnrSpec,
    pub freeze_centers: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            max_epochs: 150,
            batch_size: 16,
            lr: 1e-3,
            lr_ml: 0.5,
            lambda_ce: 1.0,
            lambda_mse: 0.5,
            lambda_ml: 0.005,
            plateau_patience: 10,
            plateau_factor: 0.1,
            plateau_threshold: 1e-4,
            train_snr: SnrSpec::Uniform {
                low_db: 0.0,
                high_db: 30.0,
            },
            freeze_centers: false,
            seed: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(RedError::Config(m));
        for (name, v) in [("lambda_ce", self.lambda_ce), ("lambda_mse", self.lambda_mse), ("lambda_ml", self.lambda_ml)] {
            if !(v.is_finite() && v >= 0.0) {
                return bad(format!("{name} must be a finite value ≥ 0, got {v}"));
            }
        }
        if !(self.plateau_factor > 0.0 && self.plateau_factor < 1.0) {
            return bad(format!("plateau_factor must lie in (0, 1), got {}", self.plateau_factor));
        }
        if !(self.lr > 0.0 && self.lr_ml >= 0.0) {
            return bad("learning rates must be positive".into());
        }
        if self.batch_size == 0 || self.max_epochs == 0 {
            return bad("batch_size and max_epochs must be positive".into());
        }
        if self.lambda_ce == 0.0 && self.lambda_mse == 0.0 && self.lambda_ml == 0.0 {
            return bad("all loss weights are zero".into());
        }
        self.train_snr.validate()
    }

    fn ml_active(&self) -> bool {
        self.lambda_ml > 0.0 && !self.freeze_centers
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossTerm {
    Ce,
    Mse,
    Ml,
}

impl LossTerm {
    pub fn label(self) -> &'static str {
        match self {
            LossTerm::Ce => "CE",
            LossTerm::Mse => "MSE",
            LossTerm::Ml => "ML",
        }
    }
}

/// Copy of `config` with the weight of every dropped term set to zero.
pub fn ablate(config: &TrainConfig, drop: &[LossTerm]) -> Result<TrainConfig> {
    let mut c = config.clone();
    for t in drop {
        match t {
            LossTerm::Ce => c.lambda_ce = 0.0,
            LossTerm::Mse => c.lambda_mse = 0.0,
            LossTerm::Ml => c.lambda_ml = 0.0,
        }
    }
    if c.lambda_ce == 0.0 && c.lambda_mse == 0.0 && c.lambda_ml == 0.0 {
        return Err(RedError::Config("cannot drop every loss term".into()));
    }
    Ok(c)
}

/// Learnable class centers for the center loss, with their own Adam state.
#[derive(Debug, Clone, PartialEq)]
pub struct CenterBank {
    /// `[K, t]`
    pub centers: Tensor,
    pub adam: AdamState,
}

impl CenterBank {
    pub fn zeros(classes: usize, dim: usize) -> Self {
        CenterBank {
            centers: Tensor::zeros(&[classes, dim]).with_grad(),
            adam: AdamState::new(classes * dim),
        }
    }

    pub fn classes(&self) -> usize {
        self.centers.shape()[0]
    }

    pub fn dim(&self) -> usize {
        self.centers.shape()[1]
    }
}

fn scalar_of(g: &Graph, v: crate::autodiff::Var) -> f64 {
    g.value(v).data()[0]
}

/// `½ · mean ‖z_i − c_{y_i}‖²`.
pub fn center_loss(z: &Tensor, labels: &[usize], centers: &Tensor) -> Result<f64> {
    let mut g = Graph::new();
    let zv = g.constant(z.clone())?;
    let cv = g.constant(centers.clone())?;
    let l = g.center_loss(zv, cv, labels)?;
    Ok(scalar_of(&g, l))
}

/// Mean squared error between the clean target and its reconstruction.
pub fn reconstruction_loss(clean: &Tensor, reconstructed: &Tensor) -> Result<f64> {
    let mut g = Graph::new();
    let a = g.constant(clean.clone())?;
    let b = g.constant(reconstructed.clone())?;
    let l = g.mse(a, b)?;
    Ok(scalar_of(&g, l))
}

/// `λ_CE·ce + λ_ML·ml + λ_MSE·mse`.
pub fn composite_loss(ce: f64, mse: f64, ml: f64, config: &TrainConfig) -> Result<f64> {
    for (name, v) in [("ce", ce), ("mse", mse), ("ml", ml)] {
        if !v.is_finite() {
            return Err(RedError::NonFinite(format!("{name} loss component")));
        }
    }
    Ok(config.lambda_ce * ce + config.lambda_ml * ml + config.lambda_mse * mse)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub ce: f64,
    pub mse: f64,
    pub ml: f64,
    pub total: f64,
}

/// Losses and gradients of one batch.
#[derive(Debug, Clone)]
pub struct BatchResult {
    pub losses: LossBreakdown,
    /// Per trainable tensor (see [`RedModel::trainable_mut`]); `None` when no gradient reached it.
    pub param_grads: Vec<Option<Vec<f64>>>,
    /// Gradient of the center loss alone w.r.t. the centers.
    pub center_grad: Option<Vec<f64>>,
    pub batch_stats: Vec<BatchStats>,
}

/// Runs one batch in train mode and backpropagates.
pub fn compute_batch(
    model: &RedModel,
    centers: &CenterBank,
    noisy: &Tensor,
    clean: &Tensor,
    labels: &[usize],
    config: &TrainConfig,
) -> Result<BatchResult> {
    let mut g = Graph::new();
    let x = g.constant(noisy.clone())?;
    let decode = config.lambda_mse > 0.0;
    let fwd = model.forward(&mut g, x, Mode::Train, decode)?;
    let ce = g.softmax_cross_entropy(fwd.logits, labels)?;
    let c_const = g.constant(centers.centers.clone())?;
    let ml = g.center_loss(fwd.feature, c_const, labels)?;
    let mut terms = vec![(ce, config.lambda_ce), (ml, config.lambda_ml)];
    let mut mse_value = 0.0;
    if let Some(rec) = fwd.reconstruction {
        let target = g.constant(clean.clone())?;
        let mse = g.mse(rec, target)?;
        mse_value = scalar_of(&g, mse);
        terms.push((mse, config.lambda_mse));
    }
    let total = g.weighted_sum(&terms)?;
    let losses = LossBreakdown {
        ce: scalar_of(&g, ce),
        mse: mse_value,
        ml: scalar_of(&g, ml),
        total: scalar_of(&g, total),
    };
    g.backward(total)?;
    let param_grads = fwd.params.iter().map(|&p| g.grad(p).map(<[f64]>::to_vec)).collect();

    let center_grad = if config.ml_active() {
        let z = g.detach(fwd.feature)?;
        let c = g.leaf(centers.centers.clone())?;
        let ml_only = g.center_loss(z, c, labels)?;
        g.backward(ml_only)?;
        g.grad(c).map(<[f64]>::to_vec)
    } else {
        None
    };
    Ok(BatchResult {
        losses,
        param_grads,
        center_grad,
        batch_stats: fwd.batch_stats,
    })
}

/// Batch of records as `[B, 2, L]`.
pub fn stack(records: &[&Record], length: usize) -> Result<Tensor> {
    let mut data = Vec::with_capacity(records.len() * 2 * length);
    for r in records {
        data.extend(r.data.iter().map(|&v| v as f64));
    }
    Tensor::new(&[records.len(), 2, length], data)
}

/// Reduce-on-plateau learning-rate schedule (minimizing).
#[derive(Debug, Clone, PartialEq)]
pub struct PlateauScheduler {
    pub lr: f64,
    patience: usize,
    factor: f64,
    threshold: f64,
    best: f64,
    bad_epochs: usize,
}

impl PlateauScheduler {
    pub fn new(lr: f64, patience: usize, factor: f64, threshold: f64) -> Self {
        PlateauScheduler {
            lr,
            patience,
            factor,
            threshold,
            best: f64::INFINITY,
            bad_epochs: 0,
        }
    }

    /// Feeds one epoch's validation loss; returns true when the rate was cut.
    pub fn step(&mut self, val_loss: f64) -> bool {
        if val_loss < self.best * (1.0 - self.threshold) {
            self.best = val_loss;
            self.bad_epochs = 0;
            return false;
        }
        self.bad_epochs += 1;
        if self.bad_epochs >= self.patience {
            self.lr *= self.factor;
            self.bad_epochs = 0;
            return true;
        }
        false
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub ce: f64,
    pub mse: f64,
    pub ml: f64,
    pub total: f64,
    pub val_total: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub checkpoints: Vec<PathBuf>,
}

impl TrainLog {
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| RedError::Format(e.to_string()))
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters at the epoch with the lowest validation loss.
    pub model: RedModel,
    pub centers: CenterBank,
    pub log: TrainLog,
}

fn split_records(dataset: &IQDataset, split: Split) -> Vec<&Record> {
    dataset.split(split).collect()
}

/// Composite loss over a split with no added noise, eval mode.
pub fn evaluate_loss(model: &RedModel, centers: &CenterBank, records: &[&Record], config: &TrainConfig) -> Result<LossBreakdown> {
    let length = model.arch.input_length;
    let mut acc = LossBreakdown::default();
    let decode = config.lambda_mse > 0.0;
    for chunk in records.chunks(config.batch_size.max(1)) {
        let x = stack(chunk, length)?;
        let labels: Vec<usize> = chunk.iter().map(|r| r.label).collect();
        let mut g = Graph::new();
        let xv = g.constant(x)?;
        let fwd = model.forward(&mut g, xv, Mode::Eval, decode)?;
        let ce = g.softmax_cross_entropy(fwd.logits, &labels)?;
        let c = g.constant(centers.centers.clone())?;
        let ml = g.center_loss(fwd.feature, c, &labels)?;
        let mse = match fwd.reconstruction {
            Some(rec) => {
                let m = g.mse(rec, xv)?;
                scalar_of(&g, m)
            }
            None => 0.0,
        };
        let w = chunk.len() as f64;
        acc.ce += w * scalar_of(&g, ce);
        acc.ml += w * scalar_of(&g, ml);
        acc.mse += w * mse;
    }
    let n = records.len() as f64;
    acc.ce /= n;
    acc.ml /= n;
    acc.mse /= n;
    acc.total = composite_loss(acc.ce, acc.mse, acc.ml, config)?;
    Ok(acc)
}

/// Trains on the train split, schedules and checkpoints on the val split.
pub fn train(mut model: RedModel, dataset: &IQDataset, config: &TrainConfig, checkpoint_dir: Option<&Path>) -> Result<TrainOutcome> {
    config.validate()?;
    let n_classes = model.arch.n_classes;
    if dataset.length != model.arch.input_length {
        return Err(RedError::shape(
            "train",
            format!("dataset length {} vs model input {}", dataset.length, model.arch.input_length),
        ));
    }
    let train_set = split_records(dataset, Split::Train);
    let val_set = split_records(dataset, Split::Val);
    if train_set.is_empty() || val_set.is_empty() {
        return Err(RedError::Degenerate("training needs non-empty train and val splits".into()));
    }
    if let Some(r) = train_set.iter().chain(&val_set).find(|r| !dataset.is_known(r.label) || r.label >= n_classes) {
        return Err(RedError::InvalidArgument(format!(
            "label {} in training data is not one of the {n_classes} known classes",
            r.label
        )));
    }

    let mut centers = CenterBank::zeros(n_classes, model.feature_dim());
    let mut adam: Vec<AdamState> = model.trainable_mut().iter().map(|t| AdamState::new(t.len())).collect();
    let mut sched = PlateauScheduler::new(config.lr, config.plateau_patience, config.plateau_factor, config.plateau_threshold);
    let mut log = TrainLog::default();
    let mut best: Option<(f64, RedModel, CenterBank)> = None;
    let length = dataset.length;

    for epoch in 1..=config.max_epochs {
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        order.shuffle(&mut seed::rng(config.seed, "shuffle", epoch as u64));
        let mut sums = LossBreakdown::default();
        for (bi, chunk) in order.chunks(config.batch_size).enumerate() {
            let recs: Vec<&Record> = chunk.iter().map(|&i| train_set[i]).collect();
            let clean = stack(&recs, length)?;
            let mut noisy = Vec::with_capacity(clean.len());
            for (&i, r) in chunk.iter().zip(&recs) {
                let mut rng = seed::rng(config.seed, "train-noise", (epoch * train_set.len() + i) as u64);
                let snr = config.train_snr.draw(&mut rng);
                noisy.extend(awgn_perturb(&r.to_f64(), 2, snr, &mut rng)?);
            }
            let noisy = Tensor::new(clean.shape(), noisy)?;
            let labels: Vec<usize> = recs.iter().map(|r| r.label).collect();

            let res = compute_batch(&model, &centers, &noisy, &clean, &labels, config).map_err(|e| match e {
                RedError::NonFinite(what) => RedError::Diverged {
                    epoch,
                    batch: bi,
                    detail: what,
                },
                other => other,
            })?;
            if !res.losses.total.is_finite() {
                return Err(RedError::Diverged {
                    epoch,
                    batch: bi,
                    detail: format!("loss {:?}", res.losses),
                });
            }
            for ((p, st), grad) in model.trainable_mut().into_iter().zip(adam.iter_mut()).zip(&res.param_grads) {
                if let Some(gr) = grad {
                    st.step(p.data_mut(), gr, sched.lr)?;
                    p.round_to_f32();
                }
            }
            model.update_running_stats(&res.batch_stats)?;
            if let Some(cg) = &res.center_grad {
                centers.adam.step(centers.centers.data_mut(), cg, config.lr_ml)?;
                centers.centers.round_to_f32();
            }
            let w = recs.len() as f64;
            sums.ce += w * res.losses.ce;
            sums.mse += w * res.losses.mse;
            sums.ml += w * res.losses.ml;
            sums.total += w * res.losses.total;
        }
        let n = train_set.len() as f64;
        let val = evaluate_loss(&model, &centers, &val_set, config)?;
        log.epochs.push(EpochRecord {
            epoch,
            lr: sched.lr,
            ce: sums.ce / n,
            mse: sums.mse / n,
            ml: sums.ml / n,
            total: sums.total / n,
            val_total: val.total,
        });
        log::debug!("epoch {epoch}: train {:.5} val {:.5} lr {:.1e}", sums.total / n, val.total, sched.lr);
        if best.as_ref().is_none_or(|b| val.total < b.0) {
            best = Some((val.total, model.clone(), centers.clone()));
            log.best_epoch = epoch;
            if let Some(dir) = checkpoint_dir {
                let path = dir.join("best.ckpt");
                Checkpoint {
                    model: model.clone(),
                    centers: Some(centers.centers.clone()),
                    semantic: None,
                }
                .save(&path)?;
                if !log.checkpoints.contains(&path) {
                    log.checkpoints.push(path);
                }
            }
        }
        sched.step(val.total);
    }
    let (_, model, centers) = best.expect("at least one epoch ran");
    Ok(TrainOutcome { model, centers, log })
}

/// Model weights plus optional training centers and detector centers.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: RedModel,
    /// Center-loss centers `[K, t]`.
    pub centers: Option<Tensor>,
    /// Detector centers computed from training features.
    pub semantic: Option<SemanticCenterSet>,
}

const CENTER_BANK_TAG: &[u8; 4] = b"CBNK";
const SEMANTIC_TAG: &[u8; 4] = b"SCTR";

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = self.model.to_bytes();
        if let Some(c) = &self.centers {
            out.extend_from_slice(CENTER_BANK_TAG);
            put_tensor(&mut out, "centers", c);
        }
        if let Some(s) = &self.semantic {
            out.extend_from_slice(SEMANTIC_TAG);
            put_u32(&mut out, s.metric().code());
            put_tensor(&mut out, "semantic_centers", s.centers());
            if let Some(v) = s.variances() {
                put_tensor(&mut out, "semantic_variances", v);
            }
        }
        out
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let (model, used) = RedModel::from_bytes(buf)?;
        let mut r = ByteReader::new(&buf[used..]);
        let mut ck = Checkpoint {
            model,
            centers: None,
            semantic: None,
        };
        while !r.is_done() {
            let tag: [u8; 4] = r.bytes(4)?.try_into().unwrap();
            match &tag {
                CENTER_BANK_TAG => ck.centers = Some(r.tensor()?.1),
                SEMANTIC_TAG => {
                    let metric = crate::detector::Metric::from_code(r.u32()?)?;
                    let centers = r.tensor()?.1;
                    let variances = match metric {
                        crate::detector::Metric::Euclidean => None,
                        crate::detector::Metric::DiagonalMahalanobis => Some(r.tensor()?.1),
                    };
                    ck.semantic = Some(SemanticCenterSet::from_parts(centers, metric, variances)?);
                }
                other => return Err(RedError::Format(format!("unknown checkpoint section {other:?}"))),
            }
        }
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }

    /// Center bank with fresh optimizer state, for evaluating the center loss.
    pub fn center_bank(&self) -> Option<CenterBank> {
        self.centers.as_ref().map(|c| CenterBank {
            centers: c.clone(),
            adam: AdamState::new(c.len()),
        })
    }
}
