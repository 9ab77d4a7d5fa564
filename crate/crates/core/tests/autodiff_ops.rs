use rand::Rng;
use red_core::autodiff::gradcheck::{check_gradients, run_battery, DEFAULT_STEP, DEFAULT_TOLERANCE};
use red_core::autodiff::{sigmoid, AdamState, Graph, Tensor, Var};
use red_core::seed;

fn t(shape: &[usize], data: Vec<f64>) -> Tensor {
    Tensor::new(shape, data).unwrap()
}

fn random(rng: &mut seed::Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    t(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect())
}

fn conv(x: &Tensor, w: &Tensor, b: &Tensor, stride: usize) -> Tensor {
    let mut g = Graph::new();
    let (x, w, b) = (g.constant(x.clone()).unwrap(), g.constant(w.clone()).unwrap(), g.constant(b.clone()).unwrap());
    let y = g.conv1d(x, w, b, stride).unwrap();
    g.value(y).clone()
}

fn conv_t(x: &Tensor, w: &Tensor, b: &Tensor, stride: usize) -> Tensor {
    let mut g = Graph::new();
    let (x, w, b) = (g.constant(x.clone()).unwrap(), g.constant(w.clone()).unwrap(), g.constant(b.clone()).unwrap());
    let y = g.conv_transpose1d(x, w, b, stride).unwrap();
    g.value(y).clone()
}

#[test]
fn conv1d_output_shape() {
    let y = conv(&Tensor::zeros(&[1, 2, 1024]), &Tensor::zeros(&[64, 2, 10]), &Tensor::zeros(&[64]), 1);
    assert_eq!(y.shape(), &[1, 64, 1015]);
}

#[test]
fn conv1d_identity_and_constant() {
    let x = t(&[1, 1, 5], vec![1.0, -2.0, 3.0, 0.5, 7.0]);
    let y = conv(&x, &t(&[1, 1, 1], vec![1.0]), &Tensor::zeros(&[1]), 1);
    assert_eq!(y.data(), x.data());
    let y = conv(&x, &Tensor::zeros(&[1, 1, 3]), &t(&[1], vec![3.5]), 1);
    assert!(y.data().iter().all(|&v| v == 3.5));
}

#[test]
fn conv1d_matches_definition() {
    let mut rng = seed::rng(3, "conv-def", 0);
    let x = random(&mut rng, &[2, 3, 17]);
    let w = random(&mut rng, &[4, 3, 5]);
    let b = random(&mut rng, &[4]);
    for stride in [1, 2, 3] {
        let y = conv(&x, &w, &b, stride);
        let lo = (17 - 5) / stride + 1;
        assert_eq!(y.shape(), &[2, 4, lo]);
        for n in 0..2 {
            for o in 0..4 {
                for tt in 0..lo {
                    let mut s = b.data()[o];
                    for c in 0..3 {
                        for k in 0..5 {
                            s += w.data()[(o * 3 + c) * 5 + k] * x.data()[(n * 3 + c) * 17 + tt * stride + k];
                        }
                    }
                    assert!((y.data()[(n * 4 + o) * lo + tt] - s).abs() < 1e-12);
                }
            }
        }
    }
}

#[test]
fn conv_short_input_is_an_error() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::zeros(&[1, 2, 5])).unwrap();
    let w = g.constant(Tensor::zeros(&[4, 2, 10])).unwrap();
    let b = g.constant(Tensor::zeros(&[4])).unwrap();
    assert!(g.conv1d(x, w, b, 1).is_err());
    let w2 = g.constant(Tensor::zeros(&[4, 3, 2])).unwrap();
    assert!(g.conv1d(x, w2, b, 1).is_err());
}

#[test]
fn conv_transpose_length_and_identity() {
    let y = conv_t(&Tensor::zeros(&[1, 2, 5]), &Tensor::zeros(&[2, 3, 3]), &Tensor::zeros(&[3]), 4);
    assert_eq!(y.shape(), &[1, 3, 19]);
    let x = t(&[1, 1, 4], vec![1.0, 2.0, -3.0, 4.0]);
    let y = conv_t(&x, &t(&[1, 1, 1], vec![1.0]), &Tensor::zeros(&[1]), 1);
    assert_eq!(y.data(), x.data());
}

#[test]
fn conv_transpose_is_the_adjoint_of_strided_conv() {
    let mut rng = seed::rng(11, "adjoint", 0);
    for case in 0..20 {
        let c_in = rng.random_range(1..4);
        let c_out = rng.random_range(1..4);
        let k = rng.random_range(1..6);
        let stride = rng.random_range(1..5);
        let lo = rng.random_range(1..8);
        let len = (lo - 1) * stride + k;
        let batch = rng.random_range(1..3);
        // conv maps c_in → c_out; its adjoint uses the same [c_out, c_in, k] buffer
        // read as a transposed-conv weight from c_out channels to c_in channels.
        let w = random(&mut rng, &[c_out, c_in, k]);
        let x = random(&mut rng, &[batch, c_in, len]);
        let y = random(&mut rng, &[batch, c_out, lo]);
        let cx = conv(&x, &w, &Tensor::zeros(&[c_out]), stride);
        let ty = conv_t(&y, &w, &Tensor::zeros(&[c_in]), stride);
        assert_eq!(ty.shape(), x.shape(), "case {case}");
        let lhs = cx.dot(&y);
        let rhs = x.dot(&ty);
        assert!((lhs - rhs).abs() <= 1e-10 * lhs.abs().max(1.0), "case {case}: {lhs} vs {rhs}");
    }
}

fn pool(x: Vec<f64>, window: usize) -> (Vec<f64>, Vec<f64>) {
    let n = x.len();
    let mut g = Graph::new();
    let v = g.leaf(t(&[1, 1, n], x).with_grad()).unwrap();
    let y = g.maxpool1d(v, window).unwrap();
    let m = y_len(&g, y);
    let s = g.project(y, &vec![1.0; m]).unwrap();
    g.backward(s).unwrap();
    (g.value(y).data().to_vec(), g.grad(v).unwrap().to_vec())
}

fn y_len(g: &Graph, y: Var) -> usize {
    g.value(y).len()
}

#[test]
fn maxpool_examples() {
    let (y, dx) = pool(vec![1.0, 3.0, 2.0, 0.0], 4);
    assert_eq!(y, vec![3.0]);
    assert_eq!(dx, vec![0.0, 1.0, 0.0, 0.0]);
    let (y, dx) = pool(vec![5.0; 4], 4);
    assert_eq!(y, vec![5.0]);
    assert_eq!(dx, vec![1.0, 0.0, 0.0, 0.0]);
    let (y, dx) = pool(vec![0.0, 1.0, 2.0, 3.0, 9.0, 9.0], 4);
    assert_eq!(y, vec![3.0]);
    assert_eq!(dx, vec![0.0, 0.0, 0.0, 1.0, 0.0, 0.0]);

    let mut g = Graph::new();
    let v = g.constant(Tensor::zeros(&[1, 1, 3])).unwrap();
    assert!(g.maxpool1d(v, 4).is_err());
}

fn bn_train(x: &Tensor) -> Tensor {
    let c = x.shape()[1];
    let mut g = Graph::new();
    let xv = g.constant(x.clone()).unwrap();
    let gamma = g.constant(Tensor::full(&[c], 1.0)).unwrap();
    let beta = g.constant(Tensor::zeros(&[c])).unwrap();
    let (y, _) = g.batchnorm_train(xv, gamma, beta, 1e-5).unwrap();
    g.value(y).clone()
}

#[test]
fn batchnorm_examples() {
    // zero-mean, unit (population) variance channel
    let x = t(&[2, 1, 2], vec![1.0, -1.0, 1.0, -1.0]);
    let y = bn_train(&x);
    for (a, b) in y.data().iter().zip(x.data()) {
        assert!((a - b).abs() < 1e-5, "{a} vs {b}");
    }
    let y = bn_train(&Tensor::full(&[3, 2, 4], 7.0));
    assert!(y.data().iter().all(|&v| v == 0.0));

    let mut g = Graph::new();
    let x = t(&[1, 2, 3], vec![1.0, 2.0, 3.0, -4.0, 0.0, 4.0]);
    let xv = g.constant(x.clone()).unwrap();
    let gamma = g.constant(t(&[2], vec![2.0, -1.0])).unwrap();
    let beta = g.constant(t(&[2], vec![0.5, 3.0])).unwrap();
    let y = g.batchnorm_eval(xv, gamma, beta, &[0.0, 0.0], &[1.0, 1.0], 0.0).unwrap();
    let want = [2.5, 4.5, 6.5, 7.0, 3.0, -1.0];
    for (a, b) in g.value(y).data().iter().zip(want) {
        assert!((a - b).abs() < 1e-12);
    }

    let mut g = Graph::new();
    let xv = g.constant(Tensor::zeros(&[1, 1, 1])).unwrap();
    let one = g.constant(Tensor::full(&[1], 1.0)).unwrap();
    let zero = g.constant(Tensor::zeros(&[1])).unwrap();
    assert!(g.batchnorm_train(xv, one, zero, 1e-5).is_err());
}

#[test]
fn dense_examples() {
    let x = t(&[2, 3], vec![1.0, 2.0, 3.0, -1.0, 0.0, 4.0]);
    let mut eye = vec![0.0; 9];
    for i in 0..3 {
        eye[i * 4] = 1.0;
    }
    let mut g = Graph::new();
    let xv = g.constant(x.clone()).unwrap();
    let w = g.constant(t(&[3, 3], eye)).unwrap();
    let b0 = g.constant(Tensor::zeros(&[3])).unwrap();
    let y = g.dense(xv, w, b0).unwrap();
    assert_eq!(g.value(y).data(), x.data());

    let z = g.constant(Tensor::zeros(&[2, 3])).unwrap();
    let w = g.constant(Tensor::full(&[2, 3], 9.0)).unwrap();
    let b = g.constant(t(&[2], vec![0.25, -1.0])).unwrap();
    let y = g.dense(z, w, b).unwrap();
    assert_eq!(g.value(y).data(), &[0.25, -1.0, 0.25, -1.0]);
}

#[test]
fn dense_gradient_on_random_instance() {
    let mut rng = seed::rng(5, "dense-fd", 0);
    let inputs = vec![random(&mut rng, &[3, 4]), random(&mut rng, &[2, 4]), random(&mut rng, &[2])];
    let probe: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
    let err = check_gradients(&inputs, &|g: &mut Graph, v: &[Var]| g.dense(v[0], v[1], v[2]), &probe, 1e-5).unwrap();
    assert!(err < 1e-6, "{err}");
}

#[test]
fn activation_examples() {
    let mut g = Graph::new();
    let x = g.constant(t(&[2], vec![-2.0, 3.0])).unwrap();
    let y = g.relu(x).unwrap();
    assert_eq!(g.value(y).data(), &[0.0, 3.0]);
    assert_eq!(sigmoid(0.0), 0.5);
    let mut rng = seed::rng(2, "sigmoid", 0);
    for _ in 0..100 {
        let v: f64 = rng.random_range(-40.0..40.0);
        assert!((sigmoid(v) + sigmoid(-v) - 1.0).abs() < 1e-15);
    }
    let x = g.constant(t(&[2], vec![-800.0, 800.0])).unwrap();
    let y = g.sigmoid(x).unwrap();
    assert!(g.value(y).data().iter().all(|&v| v > 0.0 && v < 1.0));
}

fn ce(logits: Vec<f64>, k: usize, labels: &[usize]) -> red_core::Result<f64> {
    let mut g = Graph::new();
    let b = logits.len() / k;
    let l = g.constant(t(&[b, k], logits))?;
    let loss = g.softmax_cross_entropy(l, labels)?;
    Ok(g.value(loss).data()[0])
}

#[test]
fn cross_entropy_examples() {
    assert!((ce(vec![0.3; 5], 5, &[2]).unwrap() - 5f64.ln()).abs() < 1e-12);
    assert!(ce(vec![30.0, -30.0], 2, &[0]).unwrap() < 1e-20);
    assert!(ce(vec![0.0, 0.0], 2, &[2]).is_err());

    let mut rng = seed::rng(8, "ce-fd", 0);
    let inputs = vec![random(&mut rng, &[4, 3])];
    let err = check_gradients(
        &inputs,
        &|g: &mut Graph, v: &[Var]| g.softmax_cross_entropy(v[0], &[0, 2, 1, 2]),
        &[1.0],
        1e-5,
    )
    .unwrap();
    assert!(err < 1e-5, "{err}");
}

#[test]
fn cross_entropy_gradient_is_softmax_minus_onehot() {
    let logits = vec![1.0, 2.0, 0.5, -1.0, 0.0, 3.0];
    let labels = [1, 2];
    let mut g = Graph::new();
    let l = g.leaf(t(&[2, 3], logits.clone()).with_grad()).unwrap();
    let loss = g.softmax_cross_entropy(l, &labels).unwrap();
    g.backward(loss).unwrap();
    let grad = g.grad(l).unwrap();
    for (r, row) in logits.chunks(3).enumerate() {
        let z: f64 = row.iter().map(|v| v.exp()).sum();
        for (c, v) in row.iter().enumerate() {
            let want = (v.exp() / z - f64::from(c == labels[r])) / 2.0;
            assert!((grad[r * 3 + c] - want).abs() < 1e-15);
        }
    }
}

#[test]
fn adam_examples() {
    for g0 in [0.3, -2.0, 0.05] {
        let mut st = AdamState::new(3);
        let mut p = vec![1.0, 2.0, 3.0];
        st.step(&mut p, &[g0; 3], 1e-3).unwrap();
        for (after, before) in p.iter().zip([1.0, 2.0, 3.0]) {
            let delta = after - before;
            assert!((delta.abs() - 1e-3).abs() <= 1e-6 * 1e-3 + 1e-12, "{delta}");
            assert_eq!(delta.signum(), -g0.signum());
        }
    }
    let mut st = AdamState::new(2);
    let mut p = vec![0.5, -0.5];
    st.step(&mut p, &[0.0, 0.0], 1e-3).unwrap();
    assert_eq!(p, vec![0.5, -0.5]);
    assert_eq!(st.step_count, 1);

    let run = || {
        let mut st = AdamState::new(2);
        let mut p = vec![0.1, 0.2];
        for i in 0..50 {
            st.step(&mut p, &[(i as f64).sin(), (i as f64).cos()], 1e-2).unwrap();
        }
        p
    };
    assert_eq!(run(), run());
    assert!(AdamState::new(1).step(&mut [0.0], &[f64::NAN], 1e-3).is_err());
}

#[test]
fn forward_is_pure() {
    let mut rng = seed::rng(4, "pure", 0);
    let x = random(&mut rng, &[3, 2, 40]);
    let w = random(&mut rng, &[5, 2, 4]);
    let b = random(&mut rng, &[5]);
    assert_eq!(conv(&x, &w, &b, 2).data(), conv(&x, &w, &b, 2).data());
}

#[test]
fn non_finite_inputs_are_reported() {
    assert!(Tensor::new(&[2], vec![1.0, f64::NAN]).unwrap().ensure_finite("x").is_err());
    let mut g = Graph::new();
    let a = g.constant(Tensor::full(&[2], 1e308)).unwrap();
    let b = g.constant(Tensor::full(&[2], -1e308)).unwrap();
    assert!(g.mse(a, b).is_err());
}

#[test]
fn gradient_battery_passes() {
    let checks = run_battery(5, 1, DEFAULT_STEP, DEFAULT_TOLERANCE).unwrap();
    assert!(checks.len() >= 12);
    for c in checks {
        assert!(c.passed(), "{} worst {}", c.op, c.worst_rel_error);
    }
}
