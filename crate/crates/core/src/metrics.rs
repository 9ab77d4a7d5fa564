//! Detection rates, ROC/AUC, silhouette coefficient and a 2-D PCA projection.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{RedError, Result};

/// Positive = known emitter. `tp`: known accepted, `fn_`: known rejected,
/// `fp`: rogue accepted, `tn`: rogue rejected.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub fp: usize,
    pub tn: usize,
}

impl ConfusionCounts {
    pub fn positives(&self) -> usize {
        self.tp + self.fn_
    }

    pub fn negatives(&self) -> usize {
        self.fp + self.tn
    }

    pub fn rates(&self) -> Result<(f64, f64)> {
        tpr_fpr(self)
    }
}

/// `(TP/(TP+FN), FP/(FP+TN))`.
pub fn tpr_fpr(c: &ConfusionCounts) -> Result<(f64, f64)> {
    if c.positives() == 0 || c.negatives() == 0 {
        return Err(RedError::Degenerate(format!(
            "rates need both populations (positives {}, negatives {})",
            c.positives(),
            c.negatives()
        )));
    }
    Ok((c.tp as f64 / c.positives() as f64, c.fp as f64 / c.negatives() as f64))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub fpr: f64,
    pub tpr: f64,
    /// Samples with score ≤ threshold are accepted as known.
    pub threshold: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    pub points: Vec<RocPoint>,
    pub auc: f64,
}

impl RocCurve {
    /// `fpr,tpr,threshold` rows with a header.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("fpr,tpr,threshold\n");
        for p in &self.points {
            s.push_str(&format!("{},{},{}\n", p.fpr, p.tpr, p.threshold));
        }
        s
    }
}

/// ROC of anomaly scores where lower means "more known". Equal scores move
/// together as one step; the area is trapezoidal.
pub fn roc_auc(scores: &[f64], is_known: &[bool]) -> Result<RocCurve> {
    if scores.len() != is_known.len() {
        return Err(RedError::shape("roc_auc", "one label per score"));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(RedError::NonFinite("roc score".into()));
    }
    let pos = is_known.iter().filter(|&&k| k).count();
    let neg = is_known.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(RedError::Degenerate("ROC needs both known and rogue samples".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    let mut points = vec![RocPoint {
        fpr: 0.0,
        tpr: 0.0,
        threshold: f64::NEG_INFINITY,
    }];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut auc = 0.0;
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            if is_known[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let prev = *points.last().unwrap();
        let p = RocPoint {
            fpr: fp as f64 / neg as f64,
            tpr: tp as f64 / pos as f64,
            threshold: s,
        };
        auc += (p.fpr - prev.fpr) * (p.tpr + prev.tpr) / 2.0;
        points.push(p);
    }
    Ok(RocCurve { points, auc })
}

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// Mean silhouette `(b − a) / max(a, b)` with Euclidean distances. Members of
/// singleton clusters, and points with `a = b = 0`, contribute 0.
pub fn silhouette(features: &[Vec<f64>], labels: &[usize]) -> Result<f64> {
    if features.len() != labels.len() {
        return Err(RedError::shape("silhouette", "one label per feature"));
    }
    let mut clusters: Vec<usize> = labels.to_vec();
    clusters.sort_unstable();
    clusters.dedup();
    if clusters.len() < 2 {
        return Err(RedError::Degenerate("silhouette needs at least 2 clusters".into()));
    }
    let idx: Vec<usize> = labels.iter().map(|l| clusters.binary_search(l).unwrap()).collect();
    let mut sizes = vec![0usize; clusters.len()];
    for &c in &idx {
        sizes[c] += 1;
    }
    let n = features.len();
    let mut sums = vec![0.0; n * clusters.len()];
    for i in 0..n {
        for j in (i + 1)..n {
            let d = euclid(&features[i], &features[j]);
            sums[i * clusters.len() + idx[j]] += d;
            sums[j * clusters.len() + idx[i]] += d;
        }
    }
    let mut total = 0.0;
    for i in 0..n {
        let own = idx[i];
        if sizes[own] < 2 {
            continue;
        }
        let row = &sums[i * clusters.len()..(i + 1) * clusters.len()];
        let a = row[own] / (sizes[own] - 1) as f64;
        let b = (0..clusters.len())
            .filter(|&c| c != own)
            .map(|c| row[c] / sizes[c] as f64)
            .fold(f64::INFINITY, f64::min);
        let m = a.max(b);
        if m > 0.0 {
            total += (b - a) / m;
        }
    }
    Ok(total / n as f64)
}

/// Points projected onto the top two principal components.
#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    pub coords: Vec<[f64; 2]>,
    pub components: [Vec<f64>; 2],
    pub mean: Vec<f64>,
    pub explained_variance: [f64; 2],
}

impl Projection {
    pub fn reconstruct(&self, i: usize) -> Vec<f64> {
        let [a, b] = self.coords[i];
        self.mean
            .iter()
            .zip(&self.components[0])
            .zip(&self.components[1])
            .map(|((m, u), v)| m + a * u + b * v)
            .collect()
    }

    pub fn to_csv(&self, labels: &[usize]) -> String {
        let mut s = String::from("pc1,pc2,label\n");
        for (c, l) in self.coords.iter().zip(labels) {
            s.push_str(&format!("{},{},{}\n", c[0], c[1], l));
        }
        s
    }
}

/// PCA onto the two leading components; each component's largest-magnitude
/// loading is made positive.
pub fn project2d(features: &[Vec<f64>]) -> Result<Projection> {
    let n = features.len();
    let t = features.first().map_or(0, Vec::len);
    if n < 2 || t < 2 || features.iter().any(|f| f.len() != t) {
        return Err(RedError::shape("project2d", format!("need n ≥ 2 points of equal dimension t ≥ 2 (n={n}, t={t})")));
    }
    let mut mean = vec![0.0; t];
    for f in features {
        for (m, v) in mean.iter_mut().zip(f) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }
    let centered = DMatrix::from_fn(n, t, |i, j| features[i][j] - mean[j]);
    let cov = centered.transpose() * &centered / (n - 1) as f64;
    if cov.trace() <= 0.0 {
        return Err(RedError::Degenerate("features have zero variance".into()));
    }
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..t).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let component = |k: usize| -> Vec<f64> {
        let col = eig.eigenvectors.column(order[k]);
        let mut v: Vec<f64> = col.iter().copied().collect();
        let lead = v
            .iter()
            .enumerate()
            .fold(0, |best, (i, x)| if x.abs() > v[best].abs() { i } else { best });
        if v[lead] < 0.0 {
            for x in &mut v {
                *x = -*x;
            }
        }
        v
    };
    let components = [component(0), component(1)];
    let coords = (0..n)
        .map(|i| {
            let row = centered.row(i);
            [
                row.iter().zip(&components[0]).map(|(a, b)| a * b).sum(),
                row.iter().zip(&components[1]).map(|(a, b)| a * b).sum(),
            ]
        })
        .collect();
    Ok(Projection {
        coords,
        components,
        mean,
        explained_variance: [eig.eigenvalues[order[0]].max(0.0), eig.eigenvalues[order[1]].max(0.0)],
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rate_examples() {
        let c = ConfusionCounts { tp: 9, fn_: 1, fp: 0, tn: 4 };
        assert_eq!(tpr_fpr(&c).unwrap(), (0.9, 0.0));
        let c = ConfusionCounts { tp: 5, fn_: 5, fp: 2, tn: 8 };
        assert_eq!(tpr_fpr(&c).unwrap(), (0.5, 0.2));
        assert!(tpr_fpr(&ConfusionCounts { tp: 0, fn_: 0, fp: 1, tn: 1 }).is_err());
        assert!(tpr_fpr(&ConfusionCounts { tp: 1, fn_: 0, fp: 0, tn: 0 }).is_err());
    }

    #[test]
    fn perfect_separation_auc_one() {
        let r = roc_auc(&[0.1, 0.2, 0.3, 0.9, 1.0], &[true, true, true, false, false]).unwrap();
        assert_eq!(r.auc, 1.0);
        assert_eq!(r.points.first().map(|p| (p.fpr, p.tpr)), Some((0.0, 0.0)));
        assert_eq!(r.points.last().map(|p| (p.fpr, p.tpr)), Some((1.0, 1.0)));
    }

    #[test]
    fn all_tied_scores_give_half() {
        let r = roc_auc(&[1.0; 4], &[true, false, true, false]).unwrap();
        assert_eq!(r.auc, 0.5);
        assert_eq!(r.points.len(), 2);
    }

    #[test]
    fn single_class_rejected() {
        assert!(roc_auc(&[1.0, 2.0], &[true, true]).is_err());
    }

    #[test]
    fn silhouette_degenerate_cases() {
        let f = vec![vec![0.0, 0.0]; 4];
        assert_eq!(silhouette(&f, &[0, 0, 1, 1]).unwrap(), 0.0);
        assert!(silhouette(&f, &[0, 0, 0, 0]).is_err());
        // singleton clusters contribute zero
        let f = vec![vec![0.0], vec![0.1], vec![10.0]];
        let s = silhouette(&f, &[0, 0, 1]).unwrap();
        let expect = 2.0 * (1.0 - 0.1 / 9.95) / 3.0;
        assert!((s - expect).abs() < 1e-3, "{s}");
    }

    #[test]
    fn axis_aligned_data_recovered() {
        let f = vec![vec![3.0, 0.5], vec![3.0, -0.5], vec![-3.0, 0.5], vec![-3.0, -0.5]];
        let p = project2d(&f).unwrap();
        assert!((p.components[0][0].abs() - 1.0).abs() < 1e-12);
        assert!((p.components[1][1].abs() - 1.0).abs() < 1e-12);
        assert!(p.components[0][0] > 0.0);
    }

    #[test]
    fn zero_variance_rejected() {
        assert!(project2d(&[vec![1.0, 1.0], vec![1.0, 1.0]]).is_err());
        assert!(project2d(&[vec![1.0, 1.0]]).is_err());
    }
}
