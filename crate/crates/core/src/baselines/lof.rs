use crate::error::{RedError, Result};

/// Lower bound on the mean reachability distance, so that coincident points
/// get a large finite density instead of a division by zero.
pub const LOF_DENSITY_FLOOR: f64 = 1e-12;

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// Local outlier factor in novelty mode: reference points are fixed at fit
/// time and queries are scored against them.
#[derive(Debug, Clone)]
pub struct LofModel {
    points: Vec<Vec<f64>>,
    k: usize,
    k_distance: Vec<f64>,
    lrd: Vec<f64>,
}

/// Distances to the reference set, sorted ascending, with `skip` excluded.
fn sorted_distances(points: &[Vec<f64>], q: &[f64], skip: Option<usize>) -> Vec<(f64, usize)> {
    let mut d: Vec<(f64, usize)> = points
        .iter()
        .enumerate()
        .filter(|(i, _)| Some(*i) != skip)
        .map(|(i, p)| (dist(p, q), i))
        .collect();
    d.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    d
}

/// k-distance and the k-distance neighbourhood, ties included.
fn neighbourhood(sorted: &[(f64, usize)], k: usize) -> (f64, &[(f64, usize)]) {
    let kd = sorted[k - 1].0;
    let end = sorted.partition_point(|&(d, _)| d <= kd);
    (kd, &sorted[..end])
}

impl LofModel {
    pub fn fit(points: Vec<Vec<f64>>, k: usize) -> Result<Self> {
        let n = points.len();
        if k == 0 || k >= n {
            return Err(RedError::InvalidArgument(format!("LOF needs 1 ≤ k < N (k={k}, N={n})")));
        }
        let t = points[0].len();
        if t == 0 || points.iter().any(|p| p.len() != t) {
            return Err(RedError::shape("lof_fit", "reference points must share a nonzero dimension"));
        }
        if points.iter().flatten().any(|v| !v.is_finite()) {
            return Err(RedError::NonFinite("LOF reference point".into()));
        }
        let sorted: Vec<Vec<(f64, usize)>> =
            (0..n).map(|i| sorted_distances(&points, &points[i], Some(i))).collect();
        let k_distance: Vec<f64> = sorted.iter().map(|s| s[k - 1].0).collect();
        let lrd = sorted
            .iter()
            .map(|s| {
                let (_, hood) = neighbourhood(s, k);
                density(hood, &k_distance)
            })
            .collect();
        Ok(Self { points, k, k_distance, lrd })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn score(&self, query: &[f64]) -> Result<f64> {
        if query.len() != self.points[0].len() {
            return Err(RedError::shape(
                "lof_score",
                format!("query has {} features, model has {}", query.len(), self.points[0].len()),
            ));
        }
        let sorted = sorted_distances(&self.points, query, None);
        let (_, hood) = neighbourhood(&sorted, self.k);
        let own = density(hood, &self.k_distance);
        let mean = hood.iter().map(|&(_, o)| self.lrd[o]).sum::<f64>() / hood.len() as f64;
        Ok(mean / own)
    }

    pub fn score_all(&self, queries: &[Vec<f64>]) -> Result<Vec<f64>> {
        queries.iter().map(|q| self.score(q)).collect()
    }
}

fn density(hood: &[(f64, usize)], k_distance: &[f64]) -> f64 {
    let reach = hood.iter().map(|&(d, o)| d.max(k_distance[o])).sum::<f64>() / hood.len() as f64;
    1.0 / reach.max(LOF_DENSITY_FLOOR)
}
