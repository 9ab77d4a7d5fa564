//! Brute-force reference implementations shared by the oracle suites.
#![allow(dead_code)]

pub fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// P(score_known < score_rogue) + ½·P(tie) by enumerating every pair.
pub fn rank_statistic(scores: &[f64], known: &[bool]) -> f64 {
    let (mut wins, mut pairs) = (0.0, 0.0);
    for (i, &ki) in known.iter().enumerate() {
        for (j, &kj) in known.iter().enumerate() {
            if ki && !kj {
                pairs += 1.0;
                if scores[i] < scores[j] {
                    wins += 1.0;
                } else if scores[i] == scores[j] {
                    wins += 0.5;
                }
            }
        }
    }
    wins / pairs
}

/// Straight transcription of the silhouette definition.
pub fn silhouette_oracle(x: &[Vec<f64>], labels: &[usize]) -> f64 {
    let n = x.len();
    let mut total = 0.0;
    for i in 0..n {
        let same: Vec<usize> = (0..n).filter(|&j| j != i && labels[j] == labels[i]).collect();
        if same.is_empty() {
            continue;
        }
        let a = same.iter().map(|&j| dist(&x[i], &x[j])).sum::<f64>() / same.len() as f64;
        let mut b = f64::INFINITY;
        let mut others: Vec<usize> = labels.iter().copied().filter(|&l| l != labels[i]).collect();
        others.sort();
        others.dedup();
        for l in others {
            let members: Vec<usize> = (0..n).filter(|&j| labels[j] == l).collect();
            let m = members.iter().map(|&j| dist(&x[i], &x[j])).sum::<f64>() / members.len() as f64;
            b = b.min(m);
        }
        if a.max(b) > 0.0 {
            total += (b - a) / a.max(b);
        }
    }
    total / n as f64
}

/// k-distance of `p` among `refs`, ignoring index `skip`.
pub fn k_distance(refs: &[Vec<f64>], p: &[f64], skip: Option<usize>, k: usize) -> f64 {
    let mut d: Vec<f64> = (0..refs.len()).filter(|&j| Some(j) != skip).map(|j| dist(p, &refs[j])).collect();
    d.sort_by(f64::total_cmp);
    d[k - 1]
}

pub fn neighbours(refs: &[Vec<f64>], p: &[f64], skip: Option<usize>, k: usize) -> Vec<usize> {
    let kd = k_distance(refs, p, skip, k);
    (0..refs.len()).filter(|&j| Some(j) != skip && dist(p, &refs[j]) <= kd).collect()
}

pub fn lrd(refs: &[Vec<f64>], p: &[f64], skip: Option<usize>, k: usize) -> f64 {
    let hood = neighbours(refs, p, skip, k);
    let reach: f64 = hood
        .iter()
        .map(|&o| dist(p, &refs[o]).max(k_distance(refs, &refs[o], Some(o), k)))
        .sum::<f64>()
        / hood.len() as f64;
    1.0 / reach.max(1e-12)
}

/// Local outlier factor of a query straight from the definition.
pub fn lof_oracle(refs: &[Vec<f64>], q: &[f64], k: usize) -> f64 {
    let hood = neighbours(refs, q, None, k);
    let mean: f64 = hood.iter().map(|&o| lrd(refs, &refs[o], Some(o), k)).sum::<f64>() / hood.len() as f64;
    mean / lrd(refs, q, None, k)
}
