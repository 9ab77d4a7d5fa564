use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::baselines::{IsoForest, IsoForestParams, LofModel};
use crate::detector::{compute_centers, sweep_lambda, Metric, OperatingPoint, SemanticCenterSet};
use crate::error::{RedError, Result};
use crate::metrics::{roc_auc, silhouette, RocCurve};
use crate::model::RedModel;
use crate::seed;
use crate::signal::{awgn_perturb, IQDataset, Record, Split};

use super::config::{BaselineInput, EvalSection};

const ENCODE_BATCH: usize = 64;

/// Records as `f64` rows, each perturbed at `snr_db` with its own stream
/// `(master, stage, position)`. `inf` returns the stored values.
pub fn perturb_records(records: &[&Record], snr_db: f64, master: u64, stage: &str) -> Result<Vec<Vec<f64>>> {
    records
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let x = r.to_f64();
            if snr_db == f64::INFINITY {
                return Ok(x);
            }
            let mut rng = seed::rng(master, stage, i as u64);
            awgn_perturb(&x, IQDataset::CHANNELS, snr_db, &mut rng)
        })
        .collect()
}

/// Semantic features of `[2·L]` rows, eval mode.
pub fn encode_rows(model: &RedModel, rows: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    let length = model.arch.input_length;
    let mut out = Vec::with_capacity(rows.len());
    for chunk in rows.chunks(ENCODE_BATCH) {
        let mut data = Vec::with_capacity(chunk.len() * IQDataset::CHANNELS * length);
        for r in chunk {
            if r.len() != IQDataset::CHANNELS * length {
                return Err(RedError::shape("encode", format!("row of {} values, model expects {}", r.len(), 2 * length)));
            }
            data.extend_from_slice(r);
        }
        let z = model.encode(&Tensor::new(&[chunk.len(), IQDataset::CHANNELS, length], data)?)?;
        let t = z.shape()[1];
        out.extend(z.data().chunks(t).map(<[f64]>::to_vec));
    }
    Ok(out)
}

/// Detector centers from the clean training split.
pub fn fit_centers(model: &RedModel, dataset: &IQDataset, metric: Metric) -> Result<SemanticCenterSet> {
    let train: Vec<&Record> = dataset.split(Split::Train).collect();
    let rows = perturb_records(&train, f64::INFINITY, 0, "")?;
    let features = encode_rows(model, &rows)?;
    let labels: Vec<usize> = train.iter().map(|r| r.label).collect();
    compute_centers(&features, &labels, model.arch.n_classes, metric)
}

/// Test split at one noise level: inputs, features and detector scores.
#[derive(Debug, Clone)]
pub struct TestView {
    pub snr_db: f64,
    pub labels: Vec<usize>,
    pub is_known: Vec<bool>,
    pub inputs: Vec<Vec<f64>>,
    pub features: Vec<Vec<f64>>,
    /// Distance to the nearest center; lower is more likely known.
    pub scores: Vec<f64>,
}

impl TestView {
    pub fn build(model: &RedModel, centers: &SemanticCenterSet, dataset: &IQDataset, snr_db: f64, master: u64) -> Result<Self> {
        let test: Vec<&Record> = dataset.split(Split::Test).collect();
        let stage = format!("test-noise/{snr_db}");
        let inputs = perturb_records(&test, snr_db, master, &stage)?;
        let features = encode_rows(model, &inputs)?;
        let scores = features.iter().map(|z| centers.score(z)).collect::<Result<Vec<_>>>()?;
        Ok(TestView {
            snr_db,
            labels: test.iter().map(|r| r.label).collect(),
            is_known: test.iter().map(|r| dataset.is_known(r.label)).collect(),
            inputs,
            features,
            scores,
        })
    }

    pub fn roc(&self) -> Result<RocCurve> {
        roc_auc(&self.scores, &self.is_known)
    }

    /// Silhouette of the known-class test features.
    pub fn known_silhouette(&self) -> Result<f64> {
        let (f, l) = self.known_features();
        silhouette(&f, &l)
    }

    pub fn known_features(&self) -> (Vec<Vec<f64>>, Vec<usize>) {
        self.features
            .iter()
            .zip(&self.labels)
            .zip(&self.is_known)
            .filter(|(_, &k)| k)
            .map(|((f, &l), _)| (f.clone(), l))
            .unzip()
    }
}

/// Deterministic per-SNR summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnrReport {
    pub snr_db: f64,
    pub n_known: usize,
    pub n_rogue: usize,
    pub auc: f64,
    pub silhouette: f64,
    pub operating_points: Vec<OperatingPoint>,
}

pub fn snr_report(view: &TestView, centers: &SemanticCenterSet, lambda_grid: &[f64]) -> Result<(SnrReport, RocCurve)> {
    let roc = view.roc()?;
    let n_known = view.is_known.iter().filter(|&&k| k).count();
    let report = SnrReport {
        snr_db: view.snr_db,
        n_known,
        n_rogue: view.is_known.len() - n_known,
        auc: roc.auc,
        silhouette: view.known_silhouette()?,
        operating_points: sweep_lambda(&view.features, &view.is_known, centers, lambda_grid)?,
    };
    Ok((report, roc))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BaselineAucs {
    pub lof: f64,
    pub iforest: f64,
}

/// LOF and isolation-forest AUCs, fitted on the clean training split.
pub fn baseline_aucs(
    model: &RedModel,
    dataset: &IQDataset,
    view: &TestView,
    eval: &EvalSection,
    master: u64,
) -> Result<BaselineAucs> {
    let train: Vec<&Record> = dataset.split(Split::Train).collect();
    let rows = perturb_records(&train, f64::INFINITY, 0, "")?;
    let (reference, queries) = match eval.baseline_input {
        BaselineInput::Semantic => (encode_rows(model, &rows)?, &view.features),
        BaselineInput::Raw => (rows, &view.inputs),
    };
    let iforest = IsoForest::fit(
        &reference,
        IsoForestParams {
            n_trees: eval.iforest_trees,
            psi: Some(eval.iforest_psi),
            seed: seed::derive(master, "iforest", 0),
        },
    )?;
    let lof = LofModel::fit(reference, eval.lof_k)?;
    Ok(BaselineAucs {
        lof: roc_auc(&lof.score_all(queries)?, &view.is_known)?.auc,
        iforest: roc_auc(&iforest.score_all(queries)?, &view.is_known)?.auc,
    })
}
