//! Open-set decision layer.
//!
//! Class centers are the mean training feature of each known class. A query is
//! accepted as known when its distance to the nearest center is at most
//! `λ·√(3t)`, `t` being the feature dimension; otherwise it is flagged rogue.

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{RedError, Result};
use crate::metrics::ConfusionCounts;

/// Added to every per-class variance in Mahalanobis mode.
pub const VARIANCE_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    #[default]
    Euclidean,
    /// Per-class diagonal covariance.
    DiagonalMahalanobis,
}

impl Metric {
    pub fn code(self) -> u32 {
        match self {
            Metric::Euclidean => 0,
            Metric::DiagonalMahalanobis => 1,
        }
    }

    pub fn from_code(code: u32) -> Result<Self> {
        match code {
            0 => Ok(Metric::Euclidean),
            1 => Ok(Metric::DiagonalMahalanobis),
            c => Err(RedError::Format(format!("unknown metric code {c}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SemanticCenterSet {
    centers: Tensor,
    metric: Metric,
    variances: Option<Tensor>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Decision {
    Known(usize),
    Rogue,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Verdict {
    pub decision: Decision,
    pub min_distance: f64,
    pub nearest_class: usize,
}

/// Acceptance radius `λ·√(3t)`.
pub fn threshold(lambda: f64, dim: usize) -> f64 {
    lambda * (3.0 * dim as f64).sqrt()
}

/// `{0.20, 0.25, …, 0.50}`.
pub fn default_lambda_grid() -> Vec<f64> {
    (0..=6).map(|i| (20 + 5 * i) as f64 / 100.0).collect()
}

/// Per-class mean features (and diagonal variances in Mahalanobis mode).
pub fn compute_centers(features: &[Vec<f64>], labels: &[usize], n_classes: usize, metric: Metric) -> Result<SemanticCenterSet> {
    if features.len() != labels.len() {
        return Err(RedError::shape("compute_centers", "one label per feature"));
    }
    let dim = features.first().map(Vec::len).ok_or_else(|| RedError::Degenerate("no features".into()))?;
    if dim == 0 || features.iter().any(|f| f.len() != dim) {
        return Err(RedError::shape("compute_centers", "features must share one positive dimension"));
    }
    let mut sums = vec![0.0; n_classes * dim];
    let mut counts = vec![0usize; n_classes];
    for (f, &l) in features.iter().zip(labels) {
        if l >= n_classes {
            return Err(RedError::LabelOutOfRange { label: l, classes: n_classes });
        }
        counts[l] += 1;
        for (s, v) in sums[l * dim..(l + 1) * dim].iter_mut().zip(f) {
            *s += v;
        }
    }
    if let Some(k) = counts.iter().position(|&c| c == 0) {
        return Err(RedError::Degenerate(format!("class {k} has no samples")));
    }
    for (k, row) in sums.chunks_mut(dim).enumerate() {
        for s in row {
            *s /= counts[k] as f64;
        }
    }
    let variances = match metric {
        Metric::Euclidean => None,
        Metric::DiagonalMahalanobis => {
            let mut var = vec![0.0; n_classes * dim];
            for (f, &l) in features.iter().zip(labels) {
                let mean = &sums[l * dim..(l + 1) * dim];
                for ((a, v), m) in var[l * dim..(l + 1) * dim].iter_mut().zip(f).zip(mean) {
                    *a += (v - m).powi(2);
                }
            }
            for (k, row) in var.chunks_mut(dim).enumerate() {
                for a in row {
                    *a = *a / counts[k] as f64 + VARIANCE_FLOOR;
                }
            }
            Some(Tensor::new(&[n_classes, dim], var)?)
        }
    };
    SemanticCenterSet::from_parts(Tensor::new(&[n_classes, dim], sums)?, metric, variances)
}

impl SemanticCenterSet {
    pub fn from_parts(centers: Tensor, metric: Metric, variances: Option<Tensor>) -> Result<Self> {
        if centers.rank() != 2 {
            return Err(RedError::shape("center set", "centers must be [K, t]"));
        }
        match (metric, &variances) {
            (Metric::Euclidean, None) => {}
            (Metric::DiagonalMahalanobis, Some(v)) => {
                if v.shape() != centers.shape() {
                    return Err(RedError::shape("center set", "variances must match centers"));
                }
                if v.data().iter().any(|&x| !(x > 0.0)) {
                    return Err(RedError::InvalidArgument("variances must be positive".into()));
                }
            }
            _ => return Err(RedError::InvalidArgument("variances are required exactly in Mahalanobis mode".into())),
        }
        Ok(SemanticCenterSet {
            centers,
            metric,
            variances,
        })
    }

    pub fn classes(&self) -> usize {
        self.centers.shape()[0]
    }

    /// Feature dimension `t`.
    pub fn dim(&self) -> usize {
        self.centers.shape()[1]
    }

    pub fn metric(&self) -> Metric {
        self.metric
    }

    pub fn centers(&self) -> &Tensor {
        &self.centers
    }

    pub fn center(&self, k: usize) -> &[f64] {
        &self.centers.data()[k * self.dim()..(k + 1) * self.dim()]
    }

    pub fn variances(&self) -> Option<&Tensor> {
        self.variances.as_ref()
    }

    /// Distance from `z` to every center.
    pub fn distances(&self, z: &[f64]) -> Result<Vec<f64>> {
        let dim = self.dim();
        if z.len() != dim {
            return Err(RedError::shape("distance", format!("feature has {} values, centers {dim}", z.len())));
        }
        Ok((0..self.classes())
            .map(|k| {
                let c = self.center(k);
                let sq: f64 = match &self.variances {
                    None => z.iter().zip(c).map(|(a, b)| (a - b).powi(2)).sum(),
                    Some(v) => {
                        let var = &v.data()[k * dim..(k + 1) * dim];
                        z.iter().zip(c).zip(var).map(|((a, b), s)| (a - b).powi(2) / s).sum()
                    }
                };
                sq.sqrt()
            })
            .collect())
    }

    /// Nearest class (lowest index on ties) and its distance.
    pub fn nearest(&self, z: &[f64]) -> Result<(usize, f64)> {
        let d = self.distances(z)?;
        let mut best = 0;
        for (k, &v) in d.iter().enumerate().skip(1) {
            if v < d[best] {
                best = k;
            }
        }
        Ok((best, d[best]))
    }

    /// Continuous anomaly score: distance to the nearest center.
    pub fn score(&self, z: &[f64]) -> Result<f64> {
        Ok(self.nearest(z)?.1)
    }

    pub fn decide(&self, z: &[f64], lambda: f64) -> Result<Verdict> {
        if !(lambda > 0.0) {
            return Err(RedError::InvalidArgument(format!("lambda must be positive, got {lambda}")));
        }
        let (k, d) = self.nearest(z)?;
        let decision = if d <= threshold(lambda, self.dim()) {
            Decision::Known(k)
        } else {
            Decision::Rogue
        };
        Ok(Verdict {
            decision,
            min_distance: d,
            nearest_class: k,
        })
    }
}

/// One λ's detection rates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OperatingPoint {
    pub lambda: f64,
    pub threshold: f64,
    pub tpr: f64,
    pub fpr: f64,
    pub counts: ConfusionCounts,
}

/// Operating point per λ. A known sample accepted as known is a true positive;
/// a rogue sample accepted as known is a false positive.
pub fn sweep_lambda(features: &[Vec<f64>], is_known: &[bool], centers: &SemanticCenterSet, grid: &[f64]) -> Result<Vec<OperatingPoint>> {
    if grid.is_empty() || grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(RedError::InvalidArgument("lambda grid must be non-empty and strictly ascending".into()));
    }
    if features.len() != is_known.len() {
        return Err(RedError::shape("sweep_lambda", "one label per feature"));
    }
    let scores = features.iter().map(|f| centers.score(f)).collect::<Result<Vec<_>>>()?;
    grid.iter()
        .map(|&lambda| {
            let thr = threshold(lambda, centers.dim());
            let mut c = ConfusionCounts::default();
            for (&s, &known) in scores.iter().zip(is_known) {
                match (known, s <= thr) {
                    (true, true) => c.tp += 1,
                    (true, false) => c.fn_ += 1,
                    (false, true) => c.fp += 1,
                    (false, false) => c.tn += 1,
                }
            }
            let (tpr, fpr) = c.rates()?;
            Ok(OperatingPoint {
                lambda,
                threshold: thr,
                tpr,
                fpr,
                counts: c,
            })
        })
        .collect()
}
