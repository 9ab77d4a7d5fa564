use rand::Rng;

use red_core::autodiff::{Graph, Tensor};
use red_core::error::RedError;
use red_core::model::{ArchitectureConfig, Mode, RedModel, SemanticTap};
use red_core::seed;

/// Temporal length after each stage by direct recursion, `None` once a stage is infeasible.
fn chain(len: usize, kernel: usize, pool: usize, depth: usize) -> Vec<Option<usize>> {
    let mut out = Vec::new();
    let mut cur = Some(len);
    for _ in 0..depth {
        cur = cur.and_then(|l| (l >= kernel).then(|| (l - kernel + 1) / pool)).filter(|&l| l >= 1);
        out.push(cur);
    }
    out
}

fn small(len: usize, classes: usize) -> ArchitectureConfig {
    ArchitectureConfig {
        conv_channels: 4,
        classifier_hidden: 8,
        ..ArchitectureConfig::for_input(len, classes)
    }
}

fn random_batch(b: usize, len: usize, s: u64) -> Tensor {
    let mut rng = seed::rng(s, "batch", 0);
    Tensor::new(&[b, 2, len], (0..b * 2 * len).map(|_| rng.random::<f64>()).collect()).unwrap()
}

#[test]
fn shape_chain_matches_recursion() {
    for len in [64, 100, 128, 257, 512, 1024, 2048, 6000] {
        let a = ArchitectureConfig::for_input(len, 4);
        let expect = chain(len, 10, 4, 8);
        let feasible = expect.iter().take_while(|v| v.is_some()).count();
        assert_eq!(a.encoder_depth, feasible, "L={len}");
        let shapes = a.encoder_shapes().unwrap();
        for (s, e) in shapes.iter().zip(&expect) {
            assert_eq!(Some(s.after_pool), *e);
        }
        assert_eq!(a.latent_length().unwrap(), expect[feasible - 1].unwrap());
    }
}

#[test]
fn default_sizes_at_1024() {
    let a = ArchitectureConfig::for_input(1024, 8);
    assert_eq!(a.encoder_depth, 4);
    let lens: Vec<usize> = a.encoder_shapes().unwrap().iter().map(|s| s.after_pool).collect();
    assert_eq!(lens, vec![253, 61, 13, 1]);
    assert_eq!(a.feature_dim().unwrap(), 64);
    let tapped = ArchitectureConfig {
        semantic_tap: SemanticTap::ClassifierHidden,
        ..a
    };
    assert_eq!(tapped.feature_dim().unwrap(), 1024);
}

#[test]
fn infeasible_depth_names_the_stage() {
    let deep = ArchitectureConfig {
        encoder_depth: 5,
        ..ArchitectureConfig::for_input(1024, 8)
    };
    match deep.validate() {
        Err(RedError::Architecture { stage, .. }) => assert_eq!(stage, 5),
        other => panic!("{other:?}"),
    }
    let long = ArchitectureConfig {
        encoder_depth: 7,
        ..ArchitectureConfig::for_input(6000, 8)
    };
    match long.validate() {
        Err(RedError::Architecture { stage, .. }) => assert_eq!(stage, 6),
        other => panic!("{other:?}"),
    }
    assert!(RedModel::build(deep, 1).is_err());
    assert!(ArchitectureConfig::for_input(1024, 1).validate().is_err());
}

#[test]
fn forward_shapes_and_ranges() {
    let a = small(256, 3);
    let m = RedModel::build(a.clone(), 7).unwrap();
    let x = random_batch(3, 256, 1);
    let z = m.encode(&x).unwrap();
    assert_eq!(z.shape(), &[3, a.feature_dim().unwrap()]);
    assert!(z.is_finite());
    let latent = m.encode_latent(&x).unwrap();
    let r = m.decode(&latent).unwrap();
    assert_eq!(r.shape(), &[3, 2, 256]);
    assert!(r.data().iter().all(|&v| v > 0.0 && v < 1.0));
    assert_eq!(m.classify(&latent).unwrap().shape(), &[3, 3]);

    let mut g = Graph::new();
    let xv = g.constant(x).unwrap();
    let f = m.forward(&mut g, xv, Mode::Train, true).unwrap();
    assert_eq!(g.value(f.reconstruction.unwrap()).shape(), &[3, 2, 256]);
    assert_eq!(g.value(f.logits).shape(), &[3, 3]);
    assert_eq!(f.params.len(), m.clone().trainable_mut().len());
}

#[test]
fn classifier_of_zero_latent() {
    let m = RedModel::build(small(128, 3), 2).unwrap();
    let dim = m.arch.latent_dim().unwrap();
    let y = m.classify(&Tensor::zeros(&[1, dim])).unwrap();
    let h = m.arch.classifier_hidden;
    let b1 = m.hidden.bias.data();
    let w2 = m.output.weight.data();
    let b2 = m.output.bias.data();
    for c in 0..3 {
        let expect: f64 = (0..h).map(|j| w2[c * h + j] * b1[j].max(0.0)).sum::<f64>() + b2[c];
        assert!((y.data()[c] - expect).abs() < 1e-12);
    }
}

#[test]
fn build_is_deterministic_in_the_seed() {
    let a = RedModel::build(small(128, 3), 11).unwrap();
    assert_eq!(a, RedModel::build(small(128, 3), 11).unwrap());
    assert_ne!(a, RedModel::build(small(128, 3), 12).unwrap());
    let x = random_batch(2, 128, 5);
    assert_eq!(a.encode(&x).unwrap(), a.encode(&x).unwrap());
}

#[test]
fn weights_survive_a_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.redw");
    let m = RedModel::build(small(128, 4), 9).unwrap();
    m.save(&path).unwrap();
    let back = RedModel::load(&path).unwrap();
    assert_eq!(back, m);
    let x = random_batch(2, 128, 3);
    assert_eq!(back.encode(&x).unwrap().data(), m.encode(&x).unwrap().data());
}

#[test]
fn wrong_input_shapes_rejected() {
    let m = RedModel::build(small(128, 3), 1).unwrap();
    assert!(m.encode(&random_batch(1, 100, 1)).is_err());
    assert!(m.decode(&Tensor::zeros(&[1, 3])).is_err());
    assert!(m.classify(&Tensor::zeros(&[2])).is_err());
}
