//! Central finite-difference checks of every differentiable op.
//!
//! The numeric side only ever calls forward passes, so it stays independent
//! of the backward code it is checking.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;

use super::graph::{Graph, Var};
use super::tensor::Tensor;
use crate::error::Result;
use crate::seed;

pub const DEFAULT_STEP: f64 = 1e-5;
pub const DEFAULT_TOLERANCE: f64 = 1e-4;

type Build = dyn Fn(&mut Graph, &[Var]) -> Result<Var>;

/// Worst relative error observed for one op across all its random instances.
#[derive(Debug, Clone)]
pub struct OpCheck {
    pub op: &'static str,
    pub instances: usize,
    pub worst_rel_error: f64,
    pub tolerance: f64,
}

impl OpCheck {
    pub fn passed(&self) -> bool {
        self.worst_rel_error < self.tolerance
    }
}

fn evaluate(inputs: &[Tensor], build: &Build, probe: &[f64]) -> Result<f64> {
    let mut g = Graph::new();
    let vars = inputs
        .iter()
        .map(|t| g.constant(t.clone()))
        .collect::<Result<Vec<_>>>()?;
    let out = build(&mut g, &vars)?;
    let s = g.project(out, probe)?;
    Ok(g.value(s).data()[0])
}

/// Relative error `‖a − n‖ / max(‖a‖, ‖n‖)` between analytic and numeric
/// gradients of `Σ probe · build(inputs)`, maximized over the inputs.
pub fn check_gradients(inputs: &[Tensor], build: &Build, probe: &[f64], h: f64) -> Result<f64> {
    let mut g = Graph::new();
    let vars = inputs
        .iter()
        .map(|t| g.leaf(t.clone().with_grad()))
        .collect::<Result<Vec<_>>>()?;
    let out = build(&mut g, &vars)?;
    let s = g.project(out, probe)?;
    g.backward(s)?;

    let mut worst = 0.0f64;
    for (i, v) in vars.iter().enumerate() {
        let analytic = g
            .grad(*v)
            .map(<[f64]>::to_vec)
            .unwrap_or_else(|| vec![0.0; inputs[i].len()]);
        let mut numeric = vec![0.0; inputs[i].len()];
        let mut perturbed = inputs.to_vec();
        for (j, n) in numeric.iter_mut().enumerate() {
            let orig = inputs[i].data()[j];
            perturbed[i].data_mut()[j] = orig + h;
            let up = evaluate(&perturbed, build, probe)?;
            perturbed[i].data_mut()[j] = orig - h;
            let down = evaluate(&perturbed, build, probe)?;
            perturbed[i].data_mut()[j] = orig;
            *n = (up - down) / (2.0 * h);
        }
        let diff = norm(analytic.iter().zip(&numeric).map(|(a, b)| a - b));
        let scale = norm(analytic.iter().copied()).max(norm(numeric.iter().copied())).max(1e-12);
        worst = worst.max(diff / scale);
    }
    Ok(worst)
}

fn norm(it: impl Iterator<Item = f64>) -> f64 {
    it.map(|v| v * v).sum::<f64>().sqrt()
}

fn normal(rng: &mut seed::Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.sample(StandardNormal)).collect()).unwrap()
}

/// Distinct values spaced 0.05 apart, shuffled: far from argmax ties and ReLU kinks.
fn separated(rng: &mut seed::Rng, shape: &[usize]) -> Tensor {
    let n: usize = shape.iter().product();
    let mut vals: Vec<f64> = (0..n).map(|i| (i as f64 - n as f64 / 2.0 + 0.5) * 0.05).collect();
    vals.shuffle(rng);
    Tensor::new(shape, vals).unwrap()
}

struct Case {
    op: &'static str,
    make: fn(&mut seed::Rng) -> (Vec<Tensor>, Box<Build>),
}

fn cases() -> Vec<Case> {
    vec![
        Case {
            op: "conv1d",
            make: |rng| {
                let stride = rng.random_range(1..=2);
                let k = rng.random_range(1..=4);
                let inputs = vec![normal(rng, &[2, 2, 9]), normal(rng, &[3, 2, k]), normal(rng, &[3])];
                (inputs, Box::new(move |g, v| g.conv1d(v[0], v[1], v[2], stride)))
            },
        },
        Case {
            op: "conv_transpose1d",
            make: |rng| {
                let stride = rng.random_range(1..=4);
                let inputs = vec![normal(rng, &[2, 2, 4]), normal(rng, &[2, 3, 3]), normal(rng, &[3])];
                (inputs, Box::new(move |g, v| g.conv_transpose1d(v[0], v[1], v[2], stride)))
            },
        },
        Case {
            op: "maxpool1d",
            make: |rng| {
                let inputs = vec![separated(rng, &[2, 3, 10])];
                (inputs, Box::new(|g, v| g.maxpool1d(v[0], 4)))
            },
        },
        Case {
            op: "batchnorm1d_train",
            make: |rng| {
                let inputs = vec![normal(rng, &[3, 2, 5]), normal(rng, &[2]), normal(rng, &[2])];
                (inputs, Box::new(|g, v| Ok(g.batchnorm_train(v[0], v[1], v[2], 1e-5)?.0)))
            },
        },
        Case {
            op: "batchnorm1d_eval",
            make: |rng| {
                let mean: Vec<f64> = (0..2).map(|_| rng.sample(StandardNormal)).collect();
                let var: Vec<f64> = (0..2).map(|_| rng.random_range(0.5..2.0)).collect();
                let inputs = vec![normal(rng, &[2, 2, 4]), normal(rng, &[2]), normal(rng, &[2])];
                (
                    inputs,
                    Box::new(move |g, v| g.batchnorm_eval(v[0], v[1], v[2], &mean, &var, 1e-5)),
                )
            },
        },
        Case {
            op: "dense",
            make: |rng| {
                let inputs = vec![normal(rng, &[3, 4]), normal(rng, &[5, 4]), normal(rng, &[5])];
                (inputs, Box::new(|g, v| g.dense(v[0], v[1], v[2])))
            },
        },
        Case {
            op: "relu",
            make: |rng| (vec![separated(rng, &[4, 5])], Box::new(|g, v| g.relu(v[0]))),
        },
        Case {
            op: "sigmoid",
            make: |rng| (vec![normal(rng, &[4, 5])], Box::new(|g, v| g.sigmoid(v[0]))),
        },
        Case {
            op: "crop_or_pad",
            make: |rng| {
                let target = rng.random_range(3..=11);
                (vec![normal(rng, &[2, 2, 7])], Box::new(move |g, v| g.crop_or_pad(v[0], target)))
            },
        },
        Case {
            op: "softmax_cross_entropy",
            make: |rng| {
                let labels: Vec<usize> = (0..4).map(|_| rng.random_range(0..5)).collect();
                (
                    vec![normal(rng, &[4, 5])],
                    Box::new(move |g, v| g.softmax_cross_entropy(v[0], &labels)),
                )
            },
        },
        Case {
            op: "mse",
            make: |rng| {
                (
                    vec![normal(rng, &[2, 2, 6]), normal(rng, &[2, 2, 6])],
                    Box::new(|g, v| g.mse(v[0], v[1])),
                )
            },
        },
        Case {
            op: "center_loss",
            make: |rng| {
                let labels: Vec<usize> = (0..5).map(|_| rng.random_range(0..3)).collect();
                (
                    vec![normal(rng, &[5, 4]), normal(rng, &[3, 4])],
                    Box::new(move |g, v| g.center_loss(v[0], v[1], &labels)),
                )
            },
        },
    ]
}

/// Runs every op through `instances` random finite-difference checks.
pub fn run_battery(instances: usize, master_seed: u64, h: f64, tolerance: f64) -> Result<Vec<OpCheck>> {
    let mut out = Vec::new();
    for (ci, case) in cases().into_iter().enumerate() {
        let mut worst = 0.0f64;
        for i in 0..instances {
            let mut rng = seed::rng(master_seed, case.op, (ci * 100_000 + i) as u64);
            let (inputs, build) = (case.make)(&mut rng);
            let mut g = Graph::new();
            let vars = inputs
                .iter()
                .map(|t| g.constant(t.clone()))
                .collect::<Result<Vec<_>>>()?;
            let out_var = build(&mut g, &vars)?;
            let n_out = g.value(out_var).len();
            let probe: Vec<f64> = (0..n_out).map(|_| rng.sample(StandardNormal)).collect();
            worst = worst.max(check_gradients(&inputs, build.as_ref(), &probe, h)?);
        }
        out.push(OpCheck {
            op: case.op,
            instances,
            worst_rel_error: worst,
            tolerance,
        });
    }
    Ok(out)
}
