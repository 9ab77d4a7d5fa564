use rand::Rng;
use red_core::metrics::{project2d, roc_auc, silhouette, tpr_fpr, ConfusionCounts};
use red_core::seed;

mod common;
use common::{rank_statistic, silhouette_oracle};

#[test]
fn rate_examples() {
    let (tpr, _) = tpr_fpr(&ConfusionCounts { tp: 9, fn_: 1, fp: 3, tn: 3 }).unwrap();
    assert_eq!(tpr, 0.9);
    let (_, fpr) = tpr_fpr(&ConfusionCounts { tp: 1, fn_: 1, fp: 0, tn: 7 }).unwrap();
    assert_eq!(fpr, 0.0);
    assert_eq!(tpr_fpr(&ConfusionCounts { tp: 5, fn_: 5, fp: 2, tn: 8 }).unwrap(), (0.5, 0.2));
    assert!(ConfusionCounts::default().rates().is_err());
}

#[test]
fn auc_equals_rank_statistic() {
    let mut rng = seed::rng(1, "auc-oracle", 0);
    for case in 0..50 {
        let n = rng.random_range(2..=200);
        let mut known: Vec<bool> = (0..n).map(|_| rng.random::<bool>()).collect();
        known[0] = true;
        known[1] = false;
        // coarse grid so ties are common
        let scores: Vec<f64> = (0..n).map(|_| rng.random_range(0..20) as f64 * 0.25).collect();
        let r = roc_auc(&scores, &known).unwrap();
        let oracle = rank_statistic(&scores, &known);
        assert!((r.auc - oracle).abs() < 1e-9, "case {case}: {} vs {oracle}", r.auc);
    }
}

#[test]
fn roc_shape() {
    let mut rng = seed::rng(2, "roc-shape", 0);
    let scores: Vec<f64> = (0..100).map(|_| rng.random()).collect();
    let known: Vec<bool> = (0..100).map(|i| i % 3 != 0).collect();
    let r = roc_auc(&scores, &known).unwrap();
    let first = r.points.first().unwrap();
    let last = r.points.last().unwrap();
    assert_eq!((first.fpr, first.tpr), (0.0, 0.0));
    assert_eq!((last.fpr, last.tpr), (1.0, 1.0));
    assert!(r.points.windows(2).all(|w| w[0].fpr <= w[1].fpr && w[0].tpr <= w[1].tpr));
    assert!(r.to_csv().starts_with("fpr,tpr,threshold\n"));
}

#[test]
fn random_labels_give_chance_auc() {
    let mut rng = seed::rng(3, "chance", 0);
    let scores: Vec<f64> = (0..1000).map(|_| rng.random()).collect();
    let known: Vec<bool> = (0..1000).map(|_| rng.random()).collect();
    let auc = roc_auc(&scores, &known).unwrap().auc;
    assert!((0.45..=0.55).contains(&auc), "{auc}");
}

#[test]
fn auc_invariances() {
    let mut rng = seed::rng(4, "auc-inv", 0);
    let scores: Vec<f64> = (0..300).map(|_| rng.random_range(-3.0..3.0)).collect();
    let known: Vec<bool> = scores.iter().map(|s| *s + rng.random_range(-2.0..2.0) < 0.0).collect();
    let base = roc_auc(&scores, &known).unwrap().auc;
    let mono: Vec<f64> = scores.iter().map(|s| s.exp() * 3.0 + 1.0).collect();
    assert!((roc_auc(&mono, &known).unwrap().auc - base).abs() < 1e-12);
    let neg: Vec<f64> = scores.iter().map(|s| -s).collect();
    assert!((roc_auc(&neg, &known).unwrap().auc + base - 1.0).abs() < 1e-12);
}

#[test]
fn auc_rejects_single_class() {
    assert!(roc_auc(&[0.1, 0.2], &[false, false]).is_err());
}

#[test]
fn silhouette_matches_definition() {
    let mut rng = seed::rng(5, "sil-oracle", 0);
    for case in 0..20 {
        let n = rng.random_range(3..=300);
        let k = rng.random_range(2..=5.min(n));
        let dim = rng.random_range(1..5);
        let mut labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
        labels[0] = 0;
        labels[1] = 1;
        let x: Vec<Vec<f64>> = labels
            .iter()
            .map(|&l| (0..dim).map(|_| l as f64 + rng.random_range(-1.0..1.0)).collect())
            .collect();
        let got = silhouette(&x, &labels).unwrap();
        let want = silhouette_oracle(&x, &labels);
        assert!((got - want).abs() < 1e-9, "case {case}: {got} vs {want}");
    }
}

#[test]
fn silhouette_examples() {
    let mut x = Vec::new();
    let mut labels = Vec::new();
    let mut rng = seed::rng(6, "sil-far", 0);
    for c in 0..2 {
        for _ in 0..30 {
            x.push(vec![c as f64 * 100.0 + rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]);
            labels.push(c);
        }
    }
    assert!(silhouette(&x, &labels).unwrap() > 0.9);
    assert_eq!(silhouette(&vec![vec![2.0, 2.0]; 6], &[0, 0, 0, 1, 1, 1]).unwrap(), 0.0);
    assert!(silhouette(&x, &vec![0; x.len()]).is_err());

    // rotation + translation
    let (c, s) = (0.6f64, 0.8f64);
    let moved: Vec<Vec<f64>> = x.iter().map(|p| vec![c * p[0] - s * p[1] + 5.0, s * p[0] + c * p[1] - 2.0]).collect();
    assert!((silhouette(&moved, &labels).unwrap() - silhouette(&x, &labels).unwrap()).abs() < 1e-12);
}

#[test]
fn projection_reconstructs_rank_two_data() {
    let mut rng = seed::rng(7, "pca", 0);
    let u: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
    let v: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
    let m: Vec<f64> = (0..6).map(|_| rng.random_range(-5.0..5.0)).collect();
    let x: Vec<Vec<f64>> = (0..40)
        .map(|_| {
            let (a, b) = (rng.random_range(-3.0..3.0), rng.random_range(-1.0..1.0));
            (0..6).map(|j| m[j] + a * u[j] + b * v[j]).collect()
        })
        .collect();
    let p = project2d(&x).unwrap();
    for (i, row) in x.iter().enumerate() {
        for (a, b) in p.reconstruct(i).iter().zip(row) {
            assert!((a - b).abs() < 1e-9);
        }
    }
    for c in &p.components {
        let lead = c.iter().copied().fold(0.0f64, |best, v| if v.abs() > best.abs() { v } else { best });
        assert!(lead > 0.0);
    }
    assert_eq!(p, project2d(&x).unwrap());
}

#[test]
fn projection_recovers_axes() {
    let x = vec![vec![4.0, 0.0], vec![-4.0, 0.0], vec![0.0, 1.0], vec![0.0, -1.0]];
    let p = project2d(&x).unwrap();
    assert_eq!(p.components[0], vec![1.0, 0.0]);
    assert_eq!(p.components[1], vec![0.0, 1.0]);
    assert!(project2d(&vec![vec![3.0, 3.0]; 5]).is_err());
}
