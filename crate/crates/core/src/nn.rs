//! Layer building blocks over the autodiff graph.

use alloc::format;
use alloc::vec::Vec;
#[allow(unused_imports)] // shadowed by inherent methods when std is linked
use num_traits::Float;
use rand::Rng;

use crate::autodiff::{Bound, Graph, ParamStore, Tensor, Var};
use crate::error::Result;

/// Glorot-uniform matrix of shape `fan_in × fan_out`.
pub fn xavier<R: Rng + ?Sized>(rng: &mut R, fan_in: usize, fan_out: usize) -> Tensor {
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let data = (0..fan_in * fan_out).map(|_| rng.random_range(-a..a)).collect();
    Tensor::matrix(fan_in, fan_out, data).expect("dims match")
}

/// Affine layer `x·W + b`.
#[derive(Debug, Clone, Copy)]
pub struct Linear {
    pub w: Var,
    pub b: Var,
}

impl Linear {
    pub fn init<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, fan_in: usize, fan_out: usize, rng: &mut R) -> Result<()> {
        store.insert(&format!("{name}.w"), xavier(rng, fan_in, fan_out))?;
        store.insert(&format!("{name}.b"), Tensor::zeros(&[1, fan_out]))?;
        Ok(())
    }

    pub fn bind(b: &Bound, name: &str) -> Result<Self> {
        Ok(Linear { w: b.var(&format!("{name}.w"))?, b: b.var(&format!("{name}.b"))? })
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let h = g.matmul(x, self.w)?;
        g.add_row(h, self.b)
    }
}

/// Gated recurrent unit over batched rows.
///
/// r = σ(x·Wx_r + h·Wh_r + b), u = σ(x·Wx_u + h·Wh_u + b),
/// n = tanh(x·Wx_n + b + r ⊙ (h·Wh_n + b)), h' = n + u ⊙ (h − n).
#[derive(Debug, Clone, Copy)]
pub struct Gru {
    pub wx: Var,
    pub wh: Var,
    pub bx: Var,
    pub bh: Var,
    pub hidden: usize,
}

impl Gru {
    pub fn init<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, input: usize, hidden: usize, rng: &mut R) -> Result<()> {
        store.insert(&format!("{name}.wx"), xavier(rng, input, 3 * hidden))?;
        store.insert(&format!("{name}.wh"), xavier(rng, hidden, 3 * hidden))?;
        store.insert(&format!("{name}.bx"), Tensor::zeros(&[1, 3 * hidden]))?;
        store.insert(&format!("{name}.bh"), Tensor::zeros(&[1, 3 * hidden]))?;
        Ok(())
    }

    pub fn bind(b: &Bound, g: &Graph, name: &str) -> Result<Self> {
        let wh = b.var(&format!("{name}.wh"))?;
        let hidden = g.value(wh).rows();
        Ok(Gru { wx: b.var(&format!("{name}.wx"))?, wh, bx: b.var(&format!("{name}.bx"))?, bh: b.var(&format!("{name}.bh"))?, hidden })
    }

    /// Input projection `x·Wx + bx`, computable for many steps at once.
    pub fn project_input(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let p = g.matmul(x, self.wx)?;
        g.add_row(p, self.bx)
    }

    /// One step given the projected input `gx` (B × 3H) and state `h` (B × H).
    pub fn step_projected(&self, g: &mut Graph, gx: Var, h: Var) -> Result<Var> {
        let hd = self.hidden;
        let b = g.value(h).rows();
        let gh = g.matmul(h, self.wh)?;
        let gh = g.add_row(gh, self.bh)?;
        let (xr, xu, xn) = (g.slice(gx, 0..b, 0..hd)?, g.slice(gx, 0..b, hd..2 * hd)?, g.slice(gx, 0..b, 2 * hd..3 * hd)?);
        let (hr, hu, hn) = (g.slice(gh, 0..b, 0..hd)?, g.slice(gh, 0..b, hd..2 * hd)?, g.slice(gh, 0..b, 2 * hd..3 * hd)?);
        let r = g.add(xr, hr)?;
        let r = g.sigmoid(r)?;
        let u = g.add(xu, hu)?;
        let u = g.sigmoid(u)?;
        let rn = g.mul(r, hn)?;
        let n = g.add(xn, rn)?;
        let n = g.tanh(n)?;
        let d = g.sub(h, n)?;
        let ud = g.mul(u, d)?;
        g.add(n, ud)
    }

    pub fn step(&self, g: &mut Graph, x: Var, h: Var) -> Result<Var> {
        let gx = self.project_input(g, x)?;
        self.step_projected(g, gx, h)
    }

    /// Runs over a (T·B) × input matrix laid out step-major (rows t·B..(t+1)·B
    /// hold step t) from a zero state. Returns the state after every step.
    pub fn run(&self, g: &mut Graph, xs: Var, steps: usize, batch: usize) -> Result<Vec<Var>> {
        let proj = self.project_input(g, xs)?;
        let mut h = g.constant(Tensor::zeros(&[batch, self.hidden]))?;
        let mut out = Vec::with_capacity(steps);
        for t in 0..steps {
            let gx = g.slice(proj, t * batch..(t + 1) * batch, 0..3 * self.hidden)?;
            h = self.step_projected(g, gx, h)?;
            out.push(h);
        }
        Ok(out)
    }
}

/// 1-D convolution over time: input is T × C_in (one row per frame), output
/// is T_out × C_out with `T_out = (T + 2·pad − kernel) / stride + 1`.
/// Zero rows pad both ends.
#[derive(Debug, Clone, Copy)]
pub struct Conv1d {
    pub w: Var,
    pub b: Var,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl Conv1d {
    pub fn init<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, c_in: usize, c_out: usize, kernel: usize, rng: &mut R) -> Result<()> {
        Linear::init(store, name, kernel * c_in, c_out, rng)
    }

    pub fn bind(b: &Bound, name: &str, kernel: usize, stride: usize, pad: usize) -> Result<Self> {
        let l = Linear::bind(b, name)?;
        Ok(Conv1d { w: l.w, b: l.b, kernel, stride, pad })
    }

    pub fn output_len(&self, t: usize) -> usize {
        (t + 2 * self.pad).saturating_sub(self.kernel) / self.stride + 1
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let (t, c) = (g.value(x).rows(), g.value(x).cols());
        if t + 2 * self.pad < self.kernel {
            return Err(crate::error::Error::shape("conv1d", format!("{} frames shorter than kernel {}", t, self.kernel)));
        }
        let xp = if self.pad > 0 {
            let z = g.constant(Tensor::zeros(&[self.pad, c]))?;
            g.concat_rows(&[z, x, z])?
        } else {
            x
        };
        let t_out = self.output_len(t);
        let taps: Vec<Var> = (0..self.kernel)
            .map(|k| {
                let idx: Vec<usize> = (0..t_out).map(|o| o * self.stride + k).collect();
                g.gather_rows(xp, &idx)
            })
            .collect::<Result<_>>()?;
        let patches = g.concat_cols(&taps)?;
        let y = g.matmul(patches, self.w)?;
        g.add_row(y, self.b)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::gradcheck::check_gradients;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn gru_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut store = ParamStore::new();
        Gru::init(&mut store, "gru", 3, 4, &mut rng).unwrap();
        let mut inputs: Vec<Tensor> = store.tensors().to_vec();
        inputs.push(xavier(&mut rng, 6, 3));
        let err = check_gradients(
            |g, v| {
                let gru = Gru { wx: v[0], wh: v[1], bx: v[2], bh: v[3], hidden: 4 };
                let hs = gru.run(g, v[4], 3, 2)?;
                let last = *hs.last().unwrap();
                let s = g.tanh(last)?;
                g.sum(s)
            },
            &inputs,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-6, "{}", err);
    }

    #[test]
    fn conv_matches_direct_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut store = ParamStore::new();
        Conv1d::init(&mut store, "c", 2, 3, 3, &mut rng).unwrap();
        let x = xavier(&mut rng, 7, 2);
        let mut g = Graph::new();
        let b = store.bind(&mut g).unwrap();
        let conv = Conv1d::bind(&b, "c", 3, 2, 1).unwrap();
        let xv = g.constant(x.clone()).unwrap();
        let y = conv.forward(&mut g, xv).unwrap();
        assert_eq!(g.value(y).rows(), 4);
        let w = store.get("c.w").unwrap();
        for o in 0..4 {
            for co in 0..3 {
                let mut acc = 0.0;
                for k in 0..3 {
                    let t = (o * 2 + k) as isize - 1;
                    if t < 0 || t >= 7 {
                        continue;
                    }
                    for ci in 0..2 {
                        acc += x.get(t as usize, ci) * w.get(k * 2 + ci, co);
                    }
                }
                assert!((g.value(y).get(o, co) - acc).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn batched_run_equals_row_by_row() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut store = ParamStore::new();
        Gru::init(&mut store, "gru", 2, 3, &mut rng).unwrap();
        let xs = xavier(&mut rng, 8, 2);
        let mut g = Graph::new();
        let b = store.bind(&mut g).unwrap();
        let gru = Gru::bind(&b, &g, "gru").unwrap();
        let x = g.constant(xs.clone()).unwrap();
        let both = gru.run(&mut g, x, 4, 2).unwrap();
        let both = g.value(*both.last().unwrap()).clone();
        for lane in 0..2 {
            let rows: Vec<f64> = (0..4).flat_map(|t| xs.row_slice(t * 2 + lane).to_vec()).collect();
            let x1 = g.constant(Tensor::matrix(4, 2, rows).unwrap()).unwrap();
            let one = gru.run(&mut g, x1, 4, 1).unwrap();
            assert_eq!(g.value(*one.last().unwrap()).data(), both.row_slice(lane));
        }
    }
}
