//! Central finite-difference checks of reverse-mode gradients.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
#[allow(unused_imports)] // shadowed by inherent methods when std is linked
use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{Graph, Tensor, Var};
use crate::error::Result;

/// Relative error with a floor of 1e-3 on the denominator, so gradients that
/// are numerically zero are compared in absolute terms.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-3)
}

/// Compares the gradient of the scalar built by `f` against central
/// differences with step `eps` and returns the largest relative error over
/// every input element.
pub fn check_gradients<F>(f: F, inputs: &[Tensor], eps: f64) -> Result<f64>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect::<Result<_>>()?;
    let loss = f(&mut g, &vars)?;
    g.backward(loss)?;
    let analytic: Vec<Tensor> = vars.iter().map(|&v| g.grad(v).cloned().unwrap_or_else(|| Tensor::zeros(g.value(v).shape()))).collect();
    let eval = |ins: &[Tensor]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = ins.iter().map(|t| g.constant(t.clone())).collect::<Result<_>>()?;
        let out = f(&mut g, &vars)?;
        g.value(out).item()
    };
    let mut worst = 0.0f64;
    let mut work: Vec<Tensor> = inputs.to_vec();
    for i in 0..inputs.len() {
        for j in 0..inputs[i].len() {
            let x = inputs[i].data()[j];
            work[i].data_mut()[j] = x + eps;
            let up = eval(&work)?;
            work[i].data_mut()[j] = x - eps;
            let down = eval(&work)?;
            work[i].data_mut()[j] = x;
            let numeric = (up - down) / (2.0 * eps);
            worst = worst.max(relative_error(analytic[i].data()[j], numeric));
        }
    }
    Ok(worst)
}

/// Outcome of one randomized primitive check.
#[derive(Debug, Clone, PartialEq)]
pub struct PrimitiveCase {
    pub primitive: String,
    pub max_relative_error: f64,
}

fn randn(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| StandardNormal.sample(rng)).collect();
    Tensor::new(shape.to_vec(), data).expect("shape matches")
}

/// Values kept away from zero, for kinked or singular primitives.
fn away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let mut t = randn(rng, shape);
    for v in t.data_mut() {
        if v.abs() < 0.1 {
            *v += 0.2f64.copysign(*v);
        }
    }
    t
}

type Builder = fn(&mut Graph, &[Var], &CaseDims) -> Result<Var>;

struct CaseDims {
    n: usize,
    m: usize,
    c: f64,
    idx: Vec<usize>,
}

/// Name, builder and input shapes for every differentiable primitive.
fn primitives(d: &CaseDims, k: usize) -> Vec<(&'static str, Builder, Vec<Vec<usize>>)> {
    let (n, m) = (d.n, d.m);
    vec![
        ("matmul", (|g, v, _| g.matmul(v[0], v[1])) as Builder, vec![vec![n, k], vec![k, m]]),
        ("add", |g, v, _| g.add(v[0], v[1]), vec![vec![n, m], vec![n, m]]),
        ("sub", |g, v, _| g.sub(v[0], v[1]), vec![vec![n, m], vec![n, m]]),
        ("mul", |g, v, _| g.mul(v[0], v[1]), vec![vec![n, m], vec![n, m]]),
        ("scale", |g, v, d| g.scale(v[0], d.c), vec![vec![n, m]]),
        ("add_row", |g, v, _| g.add_row(v[0], v[1]), vec![vec![n, m], vec![1, m]]),
        ("mul_scalar", |g, v, _| g.mul_scalar(v[0], v[1]), vec![vec![n, m], vec![1, 1]]),
        ("add_scalar", |g, v, _| g.add_scalar(v[0], v[1]), vec![vec![n, m], vec![1, 1]]),
        ("tanh", |g, v, _| g.tanh(v[0]), vec![vec![n, m]]),
        ("sigmoid", |g, v, _| g.sigmoid(v[0]), vec![vec![n, m]]),
        ("relu", |g, v, _| g.relu(v[0]), vec![vec![n, m]]),
        ("exp", |g, v, _| g.exp(v[0]), vec![vec![n, m]]),
        ("softmax_rows", |g, v, _| g.softmax_rows(v[0]), vec![vec![n, m]]),
        ("log_softmax_rows", |g, v, _| g.log_softmax_rows(v[0]), vec![vec![n, m]]),
        ("concat_cols", |g, v, _| g.concat_cols(&[v[0], v[1], v[0]]), vec![vec![n, m], vec![n, k]]),
        ("concat_rows", |g, v, _| g.concat_rows(&[v[0], v[1]]), vec![vec![n, m], vec![k, m]]),
        ("slice", |g, v, d| g.slice(v[0], d.n / 2..d.n, 0..(d.m + 1) / 2), vec![vec![n, m]]),
        ("gather_rows", |g, v, d| g.gather_rows(v[0], &d.idx), vec![vec![n, m]]),
        ("transpose", |g, v, _| g.transpose(v[0]), vec![vec![n, m]]),
        ("reshape", |g, v, d| g.reshape(v[0], &[d.m, d.n]), vec![vec![n, m]]),
        ("sum", |g, v, _| g.sum(v[0]), vec![vec![n, m]]),
        ("mean", |g, v, _| g.mean(v[0]), vec![vec![n, m]]),
        ("sum_rows", |g, v, _| g.sum_rows(v[0]), vec![vec![n, m]]),
        ("sum_squares", |g, v, _| g.sum_squares(v[0]), vec![vec![n, m]]),
        ("l2_normalize_rows", |g, v, _| g.l2_normalize_rows(v[0]), vec![vec![n, m]]),
        ("cosine_rows", |g, v, _| g.cosine_rows(v[0], v[1]), vec![vec![n, m], vec![n, m]]),
        ("mse", |g, v, _| g.mse(v[0], v[1]), vec![vec![n, m], vec![n, m]]),
    ]
}

/// Number of primitives covered by [`primitive_suite`].
pub fn primitive_count() -> usize {
    primitives(&CaseDims { n: 1, m: 1, c: 1.0, idx: vec![0] }, 1).len()
}

/// Runs `rounds` randomized checks of every primitive. Each check contracts
/// the primitive's output with a random weight tensor so every output element
/// contributes to the scalar.
pub fn primitive_suite(seed: u64, rounds: usize, eps: f64) -> Result<Vec<PrimitiveCase>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for _ in 0..rounds {
        let n = rng.random_range(1..5usize);
        let m = rng.random_range(1..6usize);
        let k = rng.random_range(1..5usize);
        let idx = (0..rng.random_range(1..6usize)).map(|_| rng.random_range(0..n)).collect();
        let dims = CaseDims { n, m, c: rng.random_range(-2.0..2.0), idx };
        for (name, build, shapes) in primitives(&dims, k) {
            let singular = matches!(name, "relu" | "l2_normalize_rows" | "cosine_rows");
            let inputs: Vec<Tensor> =
                shapes.iter().map(|s| if singular { away_from_zero(&mut rng, s) } else { randn(&mut rng, s) }).collect();
            let probe_shape = {
                let mut g = Graph::new();
                let vars: Vec<Var> = inputs.iter().map(|t| g.constant(t.clone())).collect::<Result<_>>()?;
                let o = build(&mut g, &vars, &dims)?;
                g.value(o).shape().to_vec()
            };
            let weights = randn(&mut rng, &probe_shape);
            let err = check_gradients(
                |g, v| {
                    let o = build(g, v, &dims)?;
                    let w = g.constant(weights.clone())?;
                    let p = g.mul(o, w)?;
                    g.sum(p)
                },
                &inputs,
                eps,
            )?;
            out.push(PrimitiveCase { primitive: name.into(), max_relative_error: err });
        }
    }
    Ok(out)
}
