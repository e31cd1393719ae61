use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::tensor::{Tensor, TensorError};

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

/// Store holding one parameter per primitive operand, so the check covers
/// gradients with respect to every input.
fn store_of(inputs: &[Tensor]) -> ParamStore {
    let mut s = ParamStore::new();
    for (i, t) in inputs.iter().enumerate() {
        s.add(format!("in{i}"), t.clone()).unwrap();
    }
    s
}

/// Reduces an arbitrary output to a scalar through fixed random weights so
/// every output entry contributes a distinct upstream gradient.
fn weighted_sum(g: &mut Graph, out: Var, seed: u64) -> Result<Var, TensorError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape = g.shape(out).to_vec();
    let w = g.input(random(&shape, &mut rng))?;
    let prod = g.mul(out, w)?;
    let n = shape.iter().product();
    let flat = g.reshape(prod, &[n])?;
    g.mean_axis(flat, 0)
}

fn check_primitive<F>(inputs: Vec<Tensor>, f: F)
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var, TensorError>,
{
    let mut store = store_of(&inputs);
    let opts = GradCheckOptions {
        abs_floor: 1e-7,
        ..GradCheckOptions::default()
    };
    let report = check_gradients(
        &mut store,
        |g, s| {
            let vars: Vec<Var> = s.ids().map(|id| g.param(s, id)).collect::<Result<_, _>>()?;
            let out = f(g, &vars)?;
            weighted_sum(g, out, 99)
        },
        opts,
    )
    .unwrap();
    assert!(report.passed(), "{report:#?}");
}

#[test]
fn matmul_hand_example() {
    let mut g = Graph::new(Mode::Infer);
    let a = g.input(Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap()).unwrap();
    let b = g.input(Tensor::from_rows(&[vec![1.0], vec![1.0]]).unwrap()).unwrap();
    let c = g.matmul(a, b).unwrap();
    assert_eq!(g.shape(c), &[2, 1]);
    assert_eq!(g.value(c).data(), &[3.0, 7.0]);
}

#[test]
fn relu_definition() {
    let mut g = Graph::new(Mode::Infer);
    let x = g.input(Tensor::from_vec(vec![-1.0, 0.0, 2.0])).unwrap();
    let y = g.relu(x).unwrap();
    assert_eq!(g.value(y).data(), &[0.0, 0.0, 2.0]);
}

#[test]
fn conv1d_matches_sliding_window_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (c_in, c_out, len, k) = (3, 2, 1292, 8);
    let x = random(&[1, c_in, len], &mut rng);
    let w = random(&[c_out, c_in, k], &mut rng);
    let b = random(&[c_out], &mut rng);
    let mut g = Graph::new(Mode::Infer);
    let (xv, wv, bv) = (g.input(x.clone()).unwrap(), g.input(w.clone()).unwrap(), g.input(b.clone()).unwrap());
    let y = g.conv1d(xv, wv, bv, 1).unwrap();
    assert_eq!(g.shape(y), &[1, c_out, 1285]);
    for co in 0..c_out {
        for t in [0, 1, 700, 1284] {
            let mut expect = b.at(&[co]);
            for ci in 0..c_in {
                for j in 0..k {
                    expect += w.at(&[co, ci, j]) * x.at(&[0, ci, t + j]);
                }
            }
            assert!((g.value(y).at(&[0, co, t]) - expect).abs() < 1e-12);
        }
    }
}

#[test]
fn mse_of_scaled_input_has_hand_gradient() {
    let mut store = ParamStore::new();
    let w = store.add("w", Tensor::new(vec![1, 1], vec![1.0]).unwrap()).unwrap();
    let mut g = Graph::new(Mode::Train);
    let x = g.input(Tensor::new(vec![1, 1], vec![2.0]).unwrap()).unwrap();
    let y = g.input(Tensor::new(vec![1, 1], vec![0.0]).unwrap()).unwrap();
    let wv = g.param(&store, w).unwrap();
    let pred = g.matmul(x, wv).unwrap();
    let loss = g.mse_loss(pred, y).unwrap();
    assert_eq!(g.value(loss).item().unwrap(), 4.0);
    g.backward(loss, &mut store).unwrap();
    assert_eq!(store.get(w).grad.data(), &[8.0]);
}

#[test]
fn unreachable_parameter_has_zero_gradient() {
    let mut store = ParamStore::new();
    let used = store.add("used", Tensor::from_vec(vec![1.5, -2.0])).unwrap();
    let unused = store.add("unused", Tensor::from_vec(vec![3.0])).unwrap();
    let mut g = Graph::new(Mode::Train);
    let u = g.param(&store, used).unwrap();
    let _ = g.param(&store, unused).unwrap();
    let sq = g.mul(u, u).unwrap();
    let loss = g.mean_axis(sq, 0).unwrap();
    g.backward(loss, &mut store).unwrap();
    assert_eq!(store.get(unused).grad.data(), &[0.0]);
    assert_eq!(store.get(used).grad.data(), &[1.5, -2.0]);
}

#[test]
fn backward_twice_is_rejected() {
    let mut store = ParamStore::new();
    let p = store.add("p", Tensor::scalar(2.0)).unwrap();
    let mut g = Graph::new(Mode::Train);
    let v = g.param(&store, p).unwrap();
    let l = g.mul(v, v).unwrap();
    g.backward(l, &mut store).unwrap();
    assert_eq!(g.backward(l, &mut store), Err(TensorError::AlreadyBackpropagated));
}

#[test]
fn backward_needs_scalar_and_train_mode() {
    let mut store = ParamStore::new();
    let p = store.add("p", Tensor::from_vec(vec![1.0, 2.0])).unwrap();
    let mut g = Graph::new(Mode::Train);
    let v = g.param(&store, p).unwrap();
    assert!(matches!(g.backward(v, &mut store), Err(TensorError::NotScalar { .. })));

    let mut g = Graph::new(Mode::Infer);
    let v = g.param(&store, p).unwrap();
    let m = g.mean_axis(v, 0).unwrap();
    assert_eq!(g.backward(m, &mut store), Err(TensorError::NotRecorded));
}

#[test]
fn shape_mismatch_names_primitive_and_shapes() {
    let mut g = Graph::new(Mode::Infer);
    let a = g.input(Tensor::zeros(&[2, 3])).unwrap();
    let b = g.input(Tensor::zeros(&[2, 3])).unwrap();
    let err = g.matmul(a, b).unwrap_err();
    assert_eq!(
        err,
        TensorError::ShapeMismatch {
            op: "matmul",
            left: vec![2, 3],
            right: vec![2, 3]
        }
    );
    assert!(err.to_string().contains("matmul"));
}

#[test]
fn non_finite_values_are_rejected() {
    let mut g = Graph::new(Mode::Infer);
    assert!(matches!(
        g.input(Tensor::from_vec(vec![f64::NAN])),
        Err(TensorError::NonFinite { .. })
    ));
    let big = g.input(Tensor::from_vec(vec![1e200])).unwrap();
    assert!(matches!(g.mul(big, big), Err(TensorError::NonFinite { .. })));
}

#[test]
fn infer_mode_records_nothing() {
    let mut store = ParamStore::new();
    let p = store.add("p", Tensor::from_vec(vec![1.0, 2.0])).unwrap();
    let mut g = Graph::new(Mode::Infer);
    let v = g.param(&store, p).unwrap();
    let d = g.dropout(v, 0.5).unwrap();
    assert_eq!(d, v, "inference dropout is the identity");
    let t = g.tanh(v).unwrap();
    let m = g.mean_axis(t, 0).unwrap();
    assert!(g.backward(m, &mut store).is_err());
}

#[test]
fn dropout_train_mode_preserves_expectation() {
    let n = 200_000;
    let mut g = Graph::with_seed(Mode::Train, 5);
    let mut store = ParamStore::new();
    let p = store.add("x", Tensor::full(&[n], 3.0)).unwrap();
    let x = g.param(&store, p).unwrap();
    let y = g.dropout(x, 0.5).unwrap();
    let vals = g.value(y).data();
    assert!(vals.iter().all(|&v| v == 0.0 || v == 6.0));
    let mean = vals.iter().sum::<f64>() / n as f64;
    assert!((mean - 3.0).abs() < 0.05, "mean {mean}");
}

#[test]
fn broadcast_add_gradient_is_sum_over_leading_axes() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut store = ParamStore::new();
    let a = store.add("a", random(&[4, 3, 2], &mut rng)).unwrap();
    let b = store.add("b", random(&[3, 2], &mut rng)).unwrap();
    let upstream = random(&[4, 3, 2], &mut rng);
    let mut g = Graph::new(Mode::Train);
    let (av, bv) = (g.param(&store, a).unwrap(), g.param(&store, b).unwrap());
    let s = g.add(av, bv).unwrap();
    let u = g.input(upstream.clone()).unwrap();
    let prod = g.mul(s, u).unwrap();
    let flat = g.reshape(prod, &[24]).unwrap();
    let m = g.mean_axis(flat, 0).unwrap();
    let loss = g.affine(m, 24.0, 0.0).unwrap();
    g.backward(loss, &mut store).unwrap();
    for j in 0..6 {
        let expect: f64 = (0..4).map(|i| upstream.data()[i * 6 + j]).sum();
        assert!((store.get(b).grad.data()[j] - expect).abs() < 1e-12);
    }
}

#[test]
fn concat_backward_splits_at_boundary() {
    let mut store = ParamStore::new();
    let a = store.add("a", Tensor::zeros(&[2, 2])).unwrap();
    let b = store.add("b", Tensor::zeros(&[2, 3])).unwrap();
    let upstream: Vec<f64> = (0..10).map(f64::from).collect();
    let mut g = Graph::new(Mode::Train);
    let (av, bv) = (g.param(&store, a).unwrap(), g.param(&store, b).unwrap());
    let c = g.concat(&[av, bv], 1).unwrap();
    assert_eq!(g.shape(c), &[2, 5]);
    let u = g.input(Tensor::new(vec![2, 5], upstream).unwrap()).unwrap();
    let prod = g.mul(c, u).unwrap();
    let flat = g.reshape(prod, &[10]).unwrap();
    let m = g.mean_axis(flat, 0).unwrap();
    let loss = g.affine(m, 10.0, 0.0).unwrap();
    g.backward(loss, &mut store).unwrap();
    assert_eq!(store.get(a).grad.data(), &[0.0, 1.0, 5.0, 6.0]);
    assert_eq!(store.get(b).grad.data(), &[2.0, 3.0, 4.0, 7.0, 8.0, 9.0]);
}

#[test]
fn fan_out_gradients_accumulate() {
    let mut store = ParamStore::new();
    let p = store.add("p", Tensor::scalar(3.0)).unwrap();
    let mut g = Graph::new(Mode::Train);
    let v = g.param(&store, p).unwrap();
    let a = g.affine(v, 2.0, 0.0).unwrap();
    let b = g.affine(v, 5.0, 1.0).unwrap();
    let s = g.add(a, b).unwrap();
    g.backward(s, &mut store).unwrap();
    assert_eq!(store.get(p).grad.data(), &[7.0]);
}

#[test]
fn every_primitive_passes_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for round in 0..3 {
        let b = rng.gen_range(1..4);
        let m = rng.gen_range(2..5);
        let n = rng.gen_range(2..5);
        let l = rng.gen_range(9..14);

        check_primitive(vec![random(&[b, m], &mut rng), random(&[m, n], &mut rng)], |g, v| g.matmul(v[0], v[1]));
        check_primitive(vec![random(&[b, m, n], &mut rng), random(&[m, n], &mut rng)], |g, v| g.add(v[0], v[1]));
        check_primitive(vec![random(&[b, m, n], &mut rng), random(&[n], &mut rng)], |g, v| g.sub(v[0], v[1]));
        check_primitive(vec![random(&[b, m], &mut rng), random(&[b, m], &mut rng)], |g, v| g.mul(v[0], v[1]));
        check_primitive(vec![random(&[b, m], &mut rng)], |g, v| g.affine(v[0], -1.5, 0.25));
        check_primitive(vec![random(&[b, m], &mut rng)], |g, v| g.sigmoid(v[0]));
        check_primitive(vec![random(&[b, m], &mut rng)], |g, v| g.tanh(v[0]));
        check_primitive(vec![random(&[b, m], &mut rng)], |g, v| g.relu(v[0]));
        check_primitive(
            vec![random(&[b, 3, l], &mut rng), random(&[2, 3, 4], &mut rng), random(&[2], &mut rng)],
            |g, v| g.conv1d(v[0], v[1], v[2], 1),
        );
        check_primitive(
            vec![random(&[b, 2, l], &mut rng), random(&[3, 2, 3], &mut rng), random(&[3], &mut rng)],
            |g, v| g.conv1d(v[0], v[1], v[2], 2),
        );
        check_primitive(
            vec![random(&[b, 2, 6, 7], &mut rng), random(&[3, 2, 2, 2], &mut rng), random(&[3], &mut rng)],
            |g, v| g.conv2d(v[0], v[1], v[2], 1),
        );
        check_primitive(vec![random(&[b, 3, l], &mut rng)], |g, v| g.maxpool1d(v[0], 4, 4));
        check_primitive(vec![random(&[b, 2, 6, 7], &mut rng)], |g, v| g.maxpool2d(v[0], 2, 2));
        check_primitive(
            vec![random(&[b + 1, 3, l], &mut rng), random(&[3], &mut rng), random(&[3], &mut rng)],
            |g, v| g.batchnorm(v[0], v[1], v[2], (&[0.0; 3], &[1.0; 3]), 1e-5, 0),
        );
        check_primitive(
            vec![random(&[b, m, 2], &mut rng), random(&[b, n, 2], &mut rng)],
            |g, v| g.concat(&[v[0], v[1]], 1),
        );
        check_primitive(vec![random(&[b, m, n], &mut rng)], |g, v| g.mean_axis(v[0], 1));
        check_primitive(vec![random(&[b, m, n], &mut rng)], |g, v| g.dropout(v[0], 0.5));
        check_primitive(vec![random(&[b, m], &mut rng), random(&[b, m], &mut rng)], |g, v| g.mse_loss(v[0], v[1]));
        check_primitive(vec![random(&[b, m, n], &mut rng)], |g, v| g.narrow(v[0], 2, 1, n - 1));
        check_primitive(vec![random(&[b, m, n], &mut rng)], |g, v| g.reshape(v[0], &[b * m, n]));
        let _ = round;
    }
}

#[test]
fn random_three_layer_net_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut store = ParamStore::new();
    let dims = [5, 7, 6, 2];
    for i in 0..3 {
        store.add(format!("w{i}"), random(&[dims[i], dims[i + 1]], &mut rng)).unwrap();
        store.add(format!("b{i}"), random(&[dims[i + 1]], &mut rng)).unwrap();
    }
    let x = random(&[4, 5], &mut rng);
    let y = random(&[4, 2], &mut rng);
    let report = check_gradients(
        &mut store,
        |g, s| {
            let mut h = g.input(x.clone())?;
            for i in 0..3 {
                let w = g.param(s, s.id_of(&format!("w{i}")).unwrap())?;
                let b = g.param(s, s.id_of(&format!("b{i}")).unwrap())?;
                let z = g.matmul(h, w)?;
                h = g.add(z, b)?;
                if i < 2 {
                    h = g.tanh(h)?;
                }
            }
            let t = g.input(y.clone())?;
            g.mse_loss(h, t)
        },
        GradCheckOptions::default(),
    )
    .unwrap();
    assert!(report.passed(), "{report:#?}");
    assert!(report.max_rel_error() < 1e-4);
}

/// Squares its input but claims the derivative is `x` instead of `2x`.
struct BrokenSquare;

impl CustomOp for BrokenSquare {
    fn name(&self) -> &str {
        "broken_square"
    }
    fn forward(&self, inputs: &[&Tensor]) -> Result<Tensor, TensorError> {
        Ok(inputs[0].map(|v| v * v))
    }
    fn backward(&self, inputs: &[&Tensor], _output: &Tensor, grad: &Tensor) -> Vec<Tensor> {
        let d = inputs[0].data().iter().zip(grad.data()).map(|(x, g)| x * g).collect();
        vec![Tensor::new(inputs[0].shape().to_vec(), d).unwrap()]
    }
}

#[test]
fn corrupted_backward_rule_is_caught_and_named() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut store = ParamStore::new();
    store.add("healthy", random(&[3, 2], &mut rng)).unwrap();
    store.add("corrupted", random(&[2], &mut rng)).unwrap();
    let x = random(&[4, 3], &mut rng);
    let report = check_gradients(
        &mut store,
        |g, s| {
            let xv = g.input(x.clone())?;
            let w = g.param(s, s.id_of("healthy").unwrap())?;
            let b = g.param(s, s.id_of("corrupted").unwrap())?;
            let bad = g.custom(&[b], Box::new(BrokenSquare))?;
            let z = g.matmul(xv, w)?;
            let z = g.add(z, bad)?;
            let z = g.reshape(z, &[8])?;
            g.mean_axis(z, 0)
        },
        GradCheckOptions::default(),
    )
    .unwrap();
    assert!(!report.passed());
    let failures = report.failures();
    assert_eq!(failures.len(), 1);
    assert_eq!(failures[0].name, "corrupted");
}

#[test]
fn gradient_check_restores_parameters() {
    let mut store = ParamStore::new();
    store.add("w", Tensor::from_vec(vec![0.3, -0.7])).unwrap();
    let before = store.clone();
    check_gradients(
        &mut store,
        |g, s| {
            let w = g.param(s, s.id_of("w").unwrap())?;
            let t = g.tanh(w)?;
            g.mean_axis(t, 0)
        },
        GradCheckOptions::default(),
    )
    .unwrap();
    for (a, b) in store.iter().zip(before.iter()) {
        assert_eq!(a.value, b.value);
    }
}

proptest! {
    #[test]
    fn mse_of_identical_tensors_is_zero(a in -1e6f64..1e6, n in 1usize..5) {
        let mut g = Graph::new(Mode::Infer);
        let x = g.input(Tensor::full(&[n, 2], a)).unwrap();
        let y = g.input(Tensor::full(&[n, 2], a)).unwrap();
        let l = g.mse_loss(x, y).unwrap();
        prop_assert_eq!(g.value(l).item().unwrap(), 0.0);
    }

    #[test]
    fn maxpool_output_length_is_floor(len in 4usize..200, size in 1usize..5) {
        let mut g = Graph::new(Mode::Infer);
        let x = g.input(Tensor::zeros(&[1, 1, len])).unwrap();
        let y = g.maxpool1d(x, size, size).unwrap();
        prop_assert_eq!(g.shape(y)[2], (len - size) / size + 1);
    }
}
