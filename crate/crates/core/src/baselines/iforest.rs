use rand::seq::index::sample;
use rand::Rng as _;

use crate::error::{RedError, Result};
use crate::seed;

const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

/// Average unsuccessful-search path length in a binary search tree of `n`
/// points: `c(n) = 2H(n−1) − 2(n−1)/n`, `c(1) = 0`.
pub fn average_path_length(n: usize) -> f64 {
    match n {
        0 | 1 => 0.0,
        2 => 1.0,
        _ => {
            let m = (n - 1) as f64;
            2.0 * (m.ln() + EULER_GAMMA) - 2.0 * m / n as f64
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IsoForestParams {
    pub n_trees: usize,
    /// Subsample size; `None` means `min(256, N)`.
    pub psi: Option<usize>,
    pub seed: u64,
}

impl Default for IsoForestParams {
    fn default() -> Self {
        Self { n_trees: 100, psi: None, seed: 1 }
    }
}

#[derive(Debug, Clone)]
enum Node {
    Split { feature: usize, value: f64, left: usize, right: usize },
    Leaf { depth: usize, size: usize },
}

#[derive(Debug, Clone)]
struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    fn grow(points: &[&[f64]], limit: usize, rng: &mut seed::Rng) -> Self {
        let mut tree = Tree { nodes: Vec::new() };
        let idx: Vec<usize> = (0..points.len()).collect();
        tree.build(points, idx, 0, limit, rng);
        tree
    }

    fn build(&mut self, points: &[&[f64]], idx: Vec<usize>, depth: usize, limit: usize, rng: &mut seed::Rng) -> usize {
        let at = self.nodes.len();
        self.nodes.push(Node::Leaf { depth, size: idx.len() });
        if depth >= limit || idx.len() <= 1 {
            return at;
        }
        let dim = points[0].len();
        let ranges: Vec<(usize, f64, f64)> = (0..dim)
            .filter_map(|f| {
                let (lo, hi) = idx.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &i| {
                    (lo.min(points[i][f]), hi.max(points[i][f]))
                });
                (hi > lo).then_some((f, lo, hi))
            })
            .collect();
        if ranges.is_empty() {
            return at;
        }
        let (feature, lo, hi) = ranges[rng.random_range(0..ranges.len())];
        let value = lo + rng.random::<f64>() * (hi - lo);
        let (l, r): (Vec<usize>, Vec<usize>) = idx.iter().partition(|&&i| points[i][feature] < value);
        if l.is_empty() || r.is_empty() {
            return at;
        }
        let left = self.build(points, l, depth + 1, limit, rng);
        let right = self.build(points, r, depth + 1, limit, rng);
        self.nodes[at] = Node::Split { feature, value, left, right };
        at
    }

    fn path_length(&self, x: &[f64]) -> f64 {
        let mut at = 0;
        loop {
            match self.nodes[at] {
                Node::Split { feature, value, left, right } => {
                    at = if x[feature] < value { left } else { right };
                }
                Node::Leaf { depth, size } => return depth as f64 + average_path_length(size),
            }
        }
    }

    fn height(&self) -> usize {
        self.nodes
            .iter()
            .filter_map(|n| match n {
                Node::Leaf { depth, .. } => Some(*depth),
                Node::Split { .. } => None,
            })
            .max()
            .unwrap_or(0)
    }
}

/// Isolation forest. Reference points are sorted before subsampling, so the
/// fit depends only on the point set and the seed.
#[derive(Debug, Clone)]
pub struct IsoForest {
    trees: Vec<Tree>,
    psi: usize,
    dim: usize,
}

impl IsoForest {
    pub fn fit(points: &[Vec<f64>], params: IsoForestParams) -> Result<Self> {
        let n = points.len();
        if n < 2 {
            return Err(RedError::InvalidArgument(format!("isolation forest needs N ≥ 2, got {n}")));
        }
        if params.n_trees == 0 {
            return Err(RedError::InvalidArgument("isolation forest needs at least one tree".into()));
        }
        let dim = points[0].len();
        if dim == 0 || points.iter().any(|p| p.len() != dim) {
            return Err(RedError::shape("iforest_fit", "reference points must share a nonzero dimension"));
        }
        if points.iter().flatten().any(|v| !v.is_finite()) {
            return Err(RedError::NonFinite("isolation forest reference point".into()));
        }
        let psi = params.psi.unwrap_or(256).min(n);
        if psi < 2 {
            return Err(RedError::InvalidArgument(format!("subsample size must be ≥ 2, got {psi}")));
        }
        let mut sorted: Vec<&[f64]> = points.iter().map(Vec::as_slice).collect();
        sorted.sort_by(|a, b| {
            a.iter()
                .zip(b.iter())
                .map(|(x, y)| x.total_cmp(y))
                .find(|o| o.is_ne())
                .unwrap_or(std::cmp::Ordering::Equal)
        });
        let limit = (psi as f64).log2().ceil() as usize;
        let trees = (0..params.n_trees)
            .map(|t| {
                let mut rng = seed::rng(params.seed, "iforest-tree", t as u64);
                let mut chosen = sample(&mut rng, n, psi).into_vec();
                chosen.sort_unstable();
                let sub: Vec<&[f64]> = chosen.iter().map(|&i| sorted[i]).collect();
                Tree::grow(&sub, limit, &mut rng)
            })
            .collect();
        Ok(Self { trees, psi, dim })
    }

    pub fn psi(&self) -> usize {
        self.psi
    }

    pub fn n_trees(&self) -> usize {
        self.trees.len()
    }

    pub fn max_height(&self) -> usize {
        self.trees.iter().map(Tree::height).max().unwrap_or(0)
    }

    pub fn mean_path_length(&self, query: &[f64]) -> Result<f64> {
        if query.len() != self.dim {
            return Err(RedError::shape(
                "iforest_score",
                format!("query has {} features, model has {}", query.len(), self.dim),
            ));
        }
        Ok(self.trees.iter().map(|t| t.path_length(query)).sum::<f64>() / self.trees.len() as f64)
    }

    /// `2^(−E[h(x)] / c(ψ))`; higher is more anomalous.
    pub fn score(&self, query: &[f64]) -> Result<f64> {
        let h = self.mean_path_length(query)?;
        Ok((-h / average_path_length(self.psi)).exp2())
    }

    pub fn score_all(&self, queries: &[Vec<f64>]) -> Result<Vec<f64>> {
        queries.iter().map(|q| self.score(q)).collect()
    }
}
