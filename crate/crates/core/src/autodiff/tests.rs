use alloc::vec;
use alloc::vec::Vec;

use super::gradcheck::{check_gradients, primitive_count, primitive_suite};
use super::*;
use crate::error::Error;

fn row(v: &[f64]) -> Tensor {
    Tensor::row(v.to_vec())
}

#[test]
fn softmax_of_equal_logits_is_uniform() {
    let mut g = Graph::new();
    let x = g.constant(row(&[0.0, 0.0, 0.0])).unwrap();
    let y = g.softmax_rows(x).unwrap();
    for &v in g.value(y).data() {
        assert!((v - 1.0 / 3.0).abs() < 1e-15);
    }
}

#[test]
fn normalize_and_cosine_examples() {
    let mut g = Graph::new();
    let x = g.constant(row(&[3.0, 4.0])).unwrap();
    let y = g.l2_normalize_rows(x).unwrap();
    assert_eq!(g.value(y).data(), &[0.6, 0.8]);
    let v = g.constant(row(&[0.3, -2.0, 5.0])).unwrap();
    let c = g.cosine_rows(v, v).unwrap();
    assert!((g.value(c).data()[0] - 1.0).abs() < 1e-15);
    let z = g.constant(row(&[0.0, 0.0])).unwrap();
    assert!(g.l2_normalize_rows(z).is_err());
}

#[test]
fn sum_of_squares_gradient() {
    let mut g = Graph::new();
    let x = g.param(row(&[1.0, 2.0, 3.0])).unwrap();
    let l = g.sum_squares(x).unwrap();
    g.backward(l).unwrap();
    assert_eq!(g.grad(x).unwrap().data(), &[2.0, 4.0, 6.0]);
}

#[test]
fn every_primitive_matches_finite_differences() {
    let cases = primitive_suite(11, 4, 1e-4).unwrap();
    assert!(cases.len() >= 100);
    assert_eq!(cases.len(), 4 * primitive_count());
    for c in &cases {
        assert!(c.max_relative_error < 1e-4, "{} error {}", c.primitive, c.max_relative_error);
    }
}

#[test]
fn softmax_gradient_rows_sum_to_zero() {
    let mut g = Graph::new();
    let x = g.param(Tensor::matrix(2, 3, vec![0.1, -0.4, 2.0, 1.0, 1.5, -3.0]).unwrap()).unwrap();
    let y = g.softmax_rows(x).unwrap();
    let w = g.constant(Tensor::matrix(2, 3, vec![1.0, 2.0, -1.0, 0.5, 0.25, 3.0]).unwrap()).unwrap();
    let p = g.mul(y, w).unwrap();
    let l = g.sum(p).unwrap();
    g.backward(l).unwrap();
    let gx = g.grad(x).unwrap();
    for r in 0..2 {
        assert!(gx.row_slice(r).iter().sum::<f64>().abs() < 1e-15);
    }
}

#[test]
fn backward_contract() {
    let mut g = Graph::new();
    let x = g.param(row(&[1.0, 2.0])).unwrap();
    assert!(matches!(g.backward(x), Err(Error::Graph(_))));
    let l = g.sum(x).unwrap();
    g.backward(l).unwrap();
    assert!(matches!(g.backward(l), Err(Error::Graph(_))));
    g.zero_grad();
    g.backward(l).unwrap();
    assert_eq!(g.grad(x).unwrap().data(), &[1.0, 1.0]);
}

#[test]
fn shape_errors_are_explicit() {
    let mut g = Graph::new();
    let a = g.constant(Tensor::zeros(&[2, 3])).unwrap();
    let b = g.constant(Tensor::zeros(&[2, 3])).unwrap();
    assert!(matches!(g.matmul(a, b), Err(Error::Shape { .. })));
    let c = g.constant(Tensor::zeros(&[3, 2])).unwrap();
    assert!(matches!(g.add(a, c), Err(Error::Shape { .. })));
    assert!(matches!(g.slice(a, 0..3, 0..1), Err(Error::Shape { .. })));
    assert!(matches!(g.gather_rows(a, &[2]), Err(Error::Shape { .. })));
    assert!(Tensor::new(vec![2, 2], vec![1.0]).is_err());
}

#[test]
fn non_finite_values_are_divergence() {
    let mut g = Graph::new();
    let a = g.constant(row(&[1000.0])).unwrap();
    assert!(g.exp(a).unwrap_err().is_divergence());
}

#[test]
fn forward_and_gradients_are_deterministic() {
    let run = || {
        let inputs = vec![Tensor::matrix(2, 2, vec![0.3, -0.2, 0.9, 1.1]).unwrap(), row(&[0.5, -0.5])];
        let mut g = Graph::new();
        let a = g.param(inputs[0].clone()).unwrap();
        let b = g.param(inputs[1].clone()).unwrap();
        let h = g.add_row(a, b).unwrap();
        let t = g.tanh(h).unwrap();
        let s = g.softmax_rows(t).unwrap();
        let l = g.sum_squares(s).unwrap();
        g.backward(l).unwrap();
        (g.value(l).clone(), g.grad(a).unwrap().clone(), g.grad(b).unwrap().clone())
    };
    assert_eq!(run(), run());
}

#[test]
fn composite_gradient_check() {
    let inputs = vec![
        Tensor::matrix(3, 2, vec![0.3, -0.2, 0.9, 1.1, -0.7, 0.4]).unwrap(),
        Tensor::matrix(2, 4, vec![0.1, 0.2, -0.3, 0.4, 0.5, -0.6, 0.7, 0.8]).unwrap(),
        row(&[0.05, -0.1, 0.2, 0.0]),
    ];
    let err = check_gradients(
        |g, v| {
            let h = g.matmul(v[0], v[1])?;
            let h = g.add_row(h, v[2])?;
            let h = g.sigmoid(h)?;
            let n = g.l2_normalize_rows(h)?;
            let s = g.log_softmax_rows(n)?;
            g.mean(s)
        },
        &inputs,
        1e-5,
    )
    .unwrap();
    assert!(err < 1e-6, "{}", err);
}

fn scalar_store(x: f64) -> ParamStore {
    let mut s = ParamStore::new();
    s.insert("x", Tensor::scalar(x)).unwrap();
    s
}

#[test]
fn adam_zero_gradient_is_fixed_point() {
    let mut store = scalar_store(0.7);
    let mut opt = Adam::new(AdamConfig::default(), &store).unwrap();
    for _ in 0..10 {
        opt.step(&mut store, &[Tensor::scalar(0.0)], None).unwrap();
    }
    assert_eq!(store.get("x").unwrap().data()[0], 0.7);
}

#[test]
fn adam_constant_positive_gradient_decreases_param() {
    let mut store = scalar_store(0.0);
    let mut opt = Adam::new(AdamConfig::default(), &store).unwrap();
    let mut prev = 0.0;
    for _ in 0..50 {
        opt.step(&mut store, &[Tensor::scalar(3.0)], None).unwrap();
        let x = store.get("x").unwrap().data()[0];
        assert!(x < prev);
        prev = x;
    }
}

/// Independent scalar Adam used as the oracle for the quadratic bowl.
fn scalar_adam_bowl(x0: f64, lr: f64, steps: usize) -> f64 {
    let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8);
    let (mut x, mut m, mut v) = (x0, 0.0, 0.0);
    for t in 1..=steps {
        let g = 2.0 * x;
        m = b1 * m + (1.0 - b1) * g;
        v = b2 * v + (1.0 - b2) * g * g;
        let mh = m / (1.0 - b1.powi(t as i32));
        let vh = v / (1.0 - b2.powi(t as i32));
        x -= lr * mh / (vh.sqrt() + eps);
    }
    x
}

#[test]
fn adam_quadratic_bowl_matches_scalar_oracle() {
    let mut store = scalar_store(1.0);
    let mut opt = Adam::new(AdamConfig::with_lr(1e-2), &store).unwrap();
    for _ in 0..500 {
        let mut g = Graph::new();
        let b = store.bind(&mut g).unwrap();
        let x = b.var("x").unwrap();
        let l = g.sum_squares(x).unwrap();
        g.backward(l).unwrap();
        let mut grads = store.zeros_like();
        b.accumulate_grads(&g, &mut grads);
        opt.step(&mut store, &grads, None).unwrap();
    }
    let x = store.get("x").unwrap().data()[0];
    let oracle = scalar_adam_bowl(1.0, 1e-2, 500);
    assert!((x - oracle).abs() < 1e-12, "{} vs {}", x, oracle);
    assert!(x.abs() < 1e-2, "{}", x);
}

#[test]
fn adam_rejects_nan_and_respects_mask() {
    let mut store = ParamStore::new();
    store.insert("a", row(&[1.0, 2.0])).unwrap();
    store.insert("b", row(&[3.0])).unwrap();
    let mut opt = Adam::new(AdamConfig::default(), &store).unwrap();
    let bad = [row(&[f64::NAN, 0.0]), row(&[1.0])];
    assert!(opt.step(&mut store, &bad, None).unwrap_err().is_divergence());
    let before = store.get("a").unwrap().clone();
    opt.step(&mut store, &[row(&[1.0, 1.0]), row(&[1.0])], Some(&[false, true])).unwrap();
    assert_eq!(store.get("a").unwrap(), &before);
    assert!(store.get("b").unwrap().data()[0] < 3.0);
    assert!(Adam::new(AdamConfig::with_lr(0.0), &store).is_err());
}

#[test]
fn checkpoint_round_trip_and_errors() {
    let mut params = ParamStore::new();
    params.insert("w", Tensor::matrix(2, 3, vec![1.0, -2.5, 3.0, 1e-300, f64::MAX, -0.0]).unwrap()).unwrap();
    params.insert("b", Tensor::new(vec![4], vec![0.1, 0.2, 0.3, 0.4]).unwrap()).unwrap();
    params.insert("t", Tensor::new(vec![2, 1, 2], vec![5.0, 6.0, 7.0, 8.0]).unwrap()).unwrap();
    let ck = Checkpoint { kind: "test".into(), meta: "{\"a\":1}".into(), params };
    let bytes = encode_checkpoint(&ck);
    let back = decode_checkpoint(&bytes).unwrap();
    assert_eq!(back, ck);
    assert!(decode_checkpoint(&bytes[..bytes.len() - 3]).is_err());
    let mut bad = bytes.clone();
    bad[0] = b'Y';
    assert!(matches!(decode_checkpoint(&bad), Err(Error::Format(_))));
    let mut extra: Vec<u8> = bytes;
    extra.push(0);
    assert!(decode_checkpoint(&extra).is_err());
}

#[test]
fn frozen_bindings_get_no_gradient() {
    let mut store = ParamStore::new();
    store.insert("enc.w", row(&[1.0])).unwrap();
    store.insert("dec.w", row(&[2.0])).unwrap();
    let mut g = Graph::new();
    let b = store.bind_with(&mut g, |n| n.starts_with("dec")).unwrap();
    let (e, d) = (b.var("enc.w").unwrap(), b.var("dec.w").unwrap());
    let p = g.mul(e, d).unwrap();
    let l = g.sum(p).unwrap();
    g.backward(l).unwrap();
    assert!(g.grad(e).is_none());
    assert_eq!(g.grad(d).unwrap().data(), &[1.0]);
}
