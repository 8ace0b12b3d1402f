use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
#[allow(unused_imports)] // shadowed by inherent methods when std is linked
use num_traits::Float;

use super::tensor::{matmul_raw, Tensor};
use crate::error::{Error, Result};

/// Handle to a node recorded on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddRow(Var, Var),
    MulScalar(Var, Var),
    AddScalar(Var, Var),
    Tanh(Var),
    Sigmoid(Var),
    Relu(Var),
    Exp(Var),
    SoftmaxRows(Var),
    LogSoftmaxRows(Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    Slice { x: Var, r0: usize, c0: usize },
    GatherRows(Var, Vec<usize>),
    Transpose(Var),
    Reshape(Var),
    Sum(Var),
    Mean(Var),
    SumRows(Var),
    SumSquares(Var),
    L2NormalizeRows(Var),
    CosineRows(Var, Var),
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Tape of recorded operations. Build a fresh graph per step, call
/// [`Graph::backward`] once on a scalar, then read gradients of the leaves.
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Tensor>>,
    backward_done: bool,
}

impl Default for Graph {
    fn default() -> Self {
        Graph::new()
    }
}

fn dims(t: &Tensor) -> (usize, usize) {
    (t.rows(), t.cols())
}

impl Graph {
    pub fn new() -> Self {
        Graph { nodes: Vec::new(), grads: Vec::new(), backward_done: false }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::Divergence(format!("non-finite value produced by {}", op_name(&op))));
        }
        self.nodes.push(Node { value, op, requires_grad });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Trainable leaf; receives a gradient on backward.
    pub fn param(&mut self, value: Tensor) -> Result<Var> {
        self.push(value, Op::Leaf, true)
    }

    /// Constant leaf.
    pub fn constant(&mut self, value: Tensor) -> Result<Var> {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn rg(&self, vs: &[Var]) -> bool {
        vs.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    fn dims(&self, v: Var) -> (usize, usize) {
        dims(&self.nodes[v.0].value)
    }

    fn unary(&mut self, x: Var, op: Op, f: impl Fn(f64) -> f64) -> Result<Var> {
        let src = &self.nodes[x.0].value;
        let data = src.data().iter().map(|&v| f(v)).collect();
        let out = Tensor::new(src.shape().to_vec(), data)?;
        let rg = self.rg(&[x]);
        self.push(out, op, rg)
    }

    fn same_dims(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.dims(a) != self.dims(b) {
            return Err(Error::shape(op, format!("{:?} vs {:?}", self.dims(a), self.dims(b))));
        }
        Ok(())
    }

    fn zip(&mut self, a: Var, b: Var, op: Op, name: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Var> {
        self.same_dims(name, a, b)?;
        let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
        let out = Tensor::new(va.shape().to_vec(), data)?;
        let rg = self.rg(&[a, b]);
        self.push(out, op, rg)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let ((n, k), (k2, m)) = (self.dims(a), self.dims(b));
        if k != k2 {
            return Err(Error::shape("matmul", format!("({}x{}) by ({}x{})", n, k, k2, m)));
        }
        let mut out = vec![0.0; n * m];
        matmul_raw(self.nodes[a.0].value.data(), self.nodes[b.0].value.data(), n, k, m, &mut out);
        let rg = self.rg(&[a, b]);
        self.push(Tensor::matrix(n, m, out)?, Op::MatMul(a, b), rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, Op::Add(a, b), "add", |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, Op::Sub(a, b), "sub", |x, y| x - y)
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, Op::Mul(a, b), "mul", |x, y| x * y)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        self.unary(a, Op::Scale(a, c), |x| x * c)
    }

    /// Adds a 1×m row to every row of an n×m input.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let ((n, m), (r, m2)) = (self.dims(a), self.dims(row));
        if r != 1 || m != m2 {
            return Err(Error::shape("add_row", format!("({}x{}) plus row ({}x{})", n, m, r, m2)));
        }
        let mut data = self.nodes[a.0].value.data().to_vec();
        let b = self.nodes[row.0].value.data();
        for chunk in data.chunks_mut(m.max(1)) {
            for (x, y) in chunk.iter_mut().zip(b) {
                *x += y;
            }
        }
        let out = Tensor::new(self.nodes[a.0].value.shape().to_vec(), data)?;
        let rg = self.rg(&[a, row]);
        self.push(out, Op::AddRow(a, row), rg)
    }

    fn check_scalar(&self, op: &'static str, s: Var) -> Result<f64> {
        let t = &self.nodes[s.0].value;
        if t.len() != 1 {
            return Err(Error::shape(op, format!("expected a one-element tensor, got {:?}", t.shape())));
        }
        Ok(t.data()[0])
    }

    /// Multiplies every element by a one-element tensor.
    pub fn mul_scalar(&mut self, a: Var, s: Var) -> Result<Var> {
        let c = self.check_scalar("mul_scalar", s)?;
        let src = &self.nodes[a.0].value;
        let out = Tensor::new(src.shape().to_vec(), src.data().iter().map(|v| v * c).collect())?;
        let rg = self.rg(&[a, s]);
        self.push(out, Op::MulScalar(a, s), rg)
    }

    /// Adds a one-element tensor to every element.
    pub fn add_scalar(&mut self, a: Var, s: Var) -> Result<Var> {
        let c = self.check_scalar("add_scalar", s)?;
        let src = &self.nodes[a.0].value;
        let out = Tensor::new(src.shape().to_vec(), src.data().iter().map(|v| v + c).collect())?;
        let rg = self.rg(&[a, s]);
        self.push(out, Op::AddScalar(a, s), rg)
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Op::Tanh(x), |v| v.tanh())
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Op::Sigmoid(x), sigmoid)
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Op::Relu(x), |v| v.max(0.0))
    }

    pub fn exp(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Op::Exp(x), |v| v.exp())
    }

    pub fn softmax_rows(&mut self, x: Var) -> Result<Var> {
        let src = &self.nodes[x.0].value;
        let (n, m) = dims(src);
        if m == 0 {
            return Err(Error::shape("softmax_rows", "zero columns"));
        }
        let mut data = src.data().to_vec();
        for r in 0..n {
            softmax_in_place(&mut data[r * m..(r + 1) * m]);
        }
        let out = Tensor::new(src.shape().to_vec(), data)?;
        let rg = self.rg(&[x]);
        self.push(out, Op::SoftmaxRows(x), rg)
    }

    pub fn log_softmax_rows(&mut self, x: Var) -> Result<Var> {
        let src = &self.nodes[x.0].value;
        let (n, m) = dims(src);
        if m == 0 {
            return Err(Error::shape("log_softmax_rows", "zero columns"));
        }
        let mut data = src.data().to_vec();
        for r in 0..n {
            let row = &mut data[r * m..(r + 1) * m];
            let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = mx + row.iter().map(|v| (v - mx).exp()).sum::<f64>().ln();
            row.iter_mut().for_each(|v| *v -= lse);
        }
        let out = Tensor::new(src.shape().to_vec(), data)?;
        let rg = self.rg(&[x]);
        self.push(out, Op::LogSoftmaxRows(x), rg)
    }

    /// Joins inputs side by side; all must have the same row count.
    pub fn concat_cols(&mut self, xs: &[Var]) -> Result<Var> {
        if xs.is_empty() {
            return Err(Error::shape("concat_cols", "no inputs"));
        }
        let n = self.dims(xs[0]).0;
        if let Some(bad) = xs.iter().find(|&&v| self.dims(v).0 != n) {
            return Err(Error::shape("concat_cols", format!("row counts {} and {}", n, self.dims(*bad).0)));
        }
        let total: usize = xs.iter().map(|&v| self.dims(v).1).sum();
        let mut data = Vec::with_capacity(n * total);
        for r in 0..n {
            for &v in xs {
                data.extend_from_slice(self.nodes[v.0].value.row_slice(r));
            }
        }
        let rg = self.rg(xs);
        self.push(Tensor::matrix(n, total, data)?, Op::ConcatCols(xs.to_vec()), rg)
    }

    /// Stacks inputs vertically; all must have the same column count.
    pub fn concat_rows(&mut self, xs: &[Var]) -> Result<Var> {
        if xs.is_empty() {
            return Err(Error::shape("concat_rows", "no inputs"));
        }
        let m = self.dims(xs[0]).1;
        if let Some(bad) = xs.iter().find(|&&v| self.dims(v).1 != m) {
            return Err(Error::shape("concat_rows", format!("column counts {} and {}", m, self.dims(*bad).1)));
        }
        let mut data = Vec::new();
        for &v in xs {
            data.extend_from_slice(self.nodes[v.0].value.data());
        }
        let n = data.len() / m.max(1);
        let rg = self.rg(xs);
        self.push(Tensor::matrix(n, m, data)?, Op::ConcatRows(xs.to_vec()), rg)
    }

    /// Rectangular block `rows × cols` of a matrix view.
    pub fn slice(&mut self, x: Var, rows: core::ops::Range<usize>, cols: core::ops::Range<usize>) -> Result<Var> {
        let (n, m) = self.dims(x);
        if rows.start > rows.end || cols.start > cols.end || rows.end > n || cols.end > m {
            return Err(Error::shape("slice", format!("{:?}x{:?} out of ({}x{})", rows, cols, n, m)));
        }
        let src = &self.nodes[x.0].value;
        let mut data = Vec::with_capacity(rows.len() * cols.len());
        for r in rows.clone() {
            data.extend_from_slice(&src.row_slice(r)[cols.clone()]);
        }
        let rg = self.rg(&[x]);
        self.push(Tensor::matrix(rows.len(), cols.len(), data)?, Op::Slice { x, r0: rows.start, c0: cols.start }, rg)
    }

    /// Output row i is input row `idx[i]`; indices may repeat.
    pub fn gather_rows(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let (n, m) = self.dims(x);
        if let Some(bad) = idx.iter().find(|&&i| i >= n) {
            return Err(Error::shape("gather_rows", format!("row {} of {}", bad, n)));
        }
        let src = &self.nodes[x.0].value;
        let mut data = Vec::with_capacity(idx.len() * m);
        for &i in idx {
            data.extend_from_slice(src.row_slice(i));
        }
        let rg = self.rg(&[x]);
        self.push(Tensor::matrix(idx.len(), m, data)?, Op::GatherRows(x, idx.to_vec()), rg)
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let (n, m) = self.dims(x);
        let src = self.nodes[x.0].value.data();
        let mut data = vec![0.0; n * m];
        for r in 0..n {
            for c in 0..m {
                data[c * n + r] = src[r * m + c];
            }
        }
        let rg = self.rg(&[x]);
        self.push(Tensor::matrix(m, n, data)?, Op::Transpose(x), rg)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.nodes[x.0].value.clone().reshaped(shape.to_vec())?;
        let rg = self.rg(&[x]);
        self.push(out, Op::Reshape(x), rg)
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.nodes[x.0].value.data().iter().sum();
        let rg = self.rg(&[x]);
        self.push(Tensor::scalar(s), Op::Sum(x), rg)
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let t = &self.nodes[x.0].value;
        if t.is_empty() {
            return Err(Error::shape("mean", "empty tensor"));
        }
        let s = t.data().iter().sum::<f64>() / t.len() as f64;
        let rg = self.rg(&[x]);
        self.push(Tensor::scalar(s), Op::Mean(x), rg)
    }

    /// Column sums as a 1×m row.
    pub fn sum_rows(&mut self, x: Var) -> Result<Var> {
        let (n, m) = self.dims(x);
        let src = self.nodes[x.0].value.data();
        let mut out = vec![0.0; m];
        for r in 0..n {
            for (o, v) in out.iter_mut().zip(&src[r * m..(r + 1) * m]) {
                *o += v;
            }
        }
        let rg = self.rg(&[x]);
        self.push(Tensor::row(out), Op::SumRows(x), rg)
    }

    pub fn sum_squares(&mut self, x: Var) -> Result<Var> {
        let s = self.nodes[x.0].value.norm_sq();
        let rg = self.rg(&[x]);
        self.push(Tensor::scalar(s), Op::SumSquares(x), rg)
    }

    /// Scales each row to unit L2 norm; an all-zero row is an error.
    pub fn l2_normalize_rows(&mut self, x: Var) -> Result<Var> {
        let src = &self.nodes[x.0].value;
        let (n, m) = dims(src);
        let mut data = src.data().to_vec();
        for r in 0..n {
            let row = &mut data[r * m..(r + 1) * m];
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm == 0.0 {
                return Err(Error::invalid(format!("cannot normalize zero vector (row {})", r)));
            }
            row.iter_mut().for_each(|v| *v /= norm);
        }
        let out = Tensor::new(src.shape().to_vec(), data)?;
        let rg = self.rg(&[x]);
        self.push(out, Op::L2NormalizeRows(x), rg)
    }

    /// Row-wise cosine similarity of two n×m inputs, as an n×1 column.
    pub fn cosine_rows(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_dims("cosine_rows", a, b)?;
        let (n, m) = self.dims(a);
        let (va, vb) = (self.nodes[a.0].value.data(), self.nodes[b.0].value.data());
        let mut out = Vec::with_capacity(n);
        for r in 0..n {
            let (x, y) = (&va[r * m..(r + 1) * m], &vb[r * m..(r + 1) * m]);
            let (nx, ny) = (norm(x), norm(y));
            if nx == 0.0 || ny == 0.0 {
                return Err(Error::invalid(format!("cosine of zero vector (row {})", r)));
            }
            out.push(dot(x, y) / (nx * ny));
        }
        let rg = self.rg(&[a, b]);
        self.push(Tensor::matrix(n, 1, out)?, Op::CosineRows(a, b), rg)
    }

    /// Mean squared difference of two equally sized inputs.
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var> {
        let d = self.sub(a, b)?;
        let n = self.nodes[d.0].value.len().max(1);
        let s = self.sum_squares(d)?;
        self.scale(s, 1.0 / n as f64)
    }

    /// Gradient of the last backward pass; `None` for nodes that do not
    /// require one or were not reached.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Clears gradients so backward may run again.
    pub fn zero_grad(&mut self) {
        self.grads.clear();
        self.backward_done = false;
    }

    /// Reverse pass from a one-element `loss`.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.backward_done {
            return Err(Error::Graph("backward already ran on this graph; call zero_grad first".into()));
        }
        if self.nodes[loss.0].value.len() != 1 {
            return Err(Error::Graph(format!("backward needs a scalar loss, got shape {:?}", self.nodes[loss.0].value.shape())));
        }
        self.backward_done = true;
        self.grads = (0..self.nodes.len()).map(|_| None).collect();
        self.grads[loss.0] = Some(Tensor::full(self.nodes[loss.0].value.shape(), 1.0));
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = self.grads[i].take() else { continue };
            // Parents always precede node i, so its value can be moved out while propagating.
            let y = core::mem::replace(&mut self.nodes[i].value, Tensor::placeholder());
            let op = core::mem::replace(&mut self.nodes[i].op, Op::Leaf);
            let res = self.propagate(&op, &y, &g);
            self.nodes[i].value = y;
            self.nodes[i].op = op;
            res?;
            self.grads[i] = Some(g);
        }
        let bad = self.nodes.iter().zip(&self.grads).any(|(n, g)| matches!(n.op, Op::Leaf) && g.as_ref().is_some_and(|g| !g.is_finite()));
        if bad {
            return Err(Error::Divergence("non-finite gradient".into()));
        }
        Ok(())
    }

    fn acc(&mut self, v: Var, g: Tensor) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut self.grads[v.0] {
            Some(existing) => existing.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn like(&self, v: Var, data: Vec<f64>) -> Tensor {
        Tensor::new(self.nodes[v.0].value.shape().to_vec(), data).expect("gradient matches value shape")
    }

    fn propagate(&mut self, op: &Op, y: &Tensor, g: &Tensor) -> Result<()> {
        let gd = g.data();
        match *op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let ((n, k), (_, m)) = (self.dims(a), self.dims(b));
                if self.requires_grad(a) {
                    // dA = G · Bᵀ
                    let bv = self.nodes[b.0].value.data();
                    let mut ga = vec![0.0; n * k];
                    for r in 0..n {
                        let grow = &gd[r * m..(r + 1) * m];
                        for p in 0..k {
                            ga[r * k + p] = dot(grow, &bv[p * m..(p + 1) * m]);
                        }
                    }
                    let t = self.like(a, ga);
                    self.acc(a, t);
                }
                if self.requires_grad(b) {
                    // dB = Aᵀ · G
                    let av = self.nodes[a.0].value.data();
                    let mut gb = vec![0.0; k * m];
                    for r in 0..n {
                        let grow = &gd[r * m..(r + 1) * m];
                        for p in 0..k {
                            let x = av[r * k + p];
                            if x == 0.0 {
                                continue;
                            }
                            for (o, gv) in gb[p * m..(p + 1) * m].iter_mut().zip(grow) {
                                *o += x * gv;
                            }
                        }
                    }
                    let t = self.like(b, gb);
                    self.acc(b, t);
                }
            }
            Op::Add(a, b) => {
                let (ta, tb) = (self.like(a, gd.to_vec()), self.like(b, gd.to_vec()));
                self.acc(a, ta);
                self.acc(b, tb);
            }
            Op::Sub(a, b) => {
                let ta = self.like(a, gd.to_vec());
                let tb = self.like(b, gd.iter().map(|v| -v).collect());
                self.acc(a, ta);
                self.acc(b, tb);
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.nodes[a.0].value.data(), self.nodes[b.0].value.data());
                let ga = gd.iter().zip(vb).map(|(g, y)| g * y).collect();
                let gb = gd.iter().zip(va).map(|(g, x)| g * x).collect();
                let (ta, tb) = (self.like(a, ga), self.like(b, gb));
                self.acc(a, ta);
                self.acc(b, tb);
            }
            Op::Scale(a, c) => {
                let t = self.like(a, gd.iter().map(|v| v * c).collect());
                self.acc(a, t);
            }
            Op::AddRow(a, row) => {
                let m = self.dims(a).1;
                let mut gr = vec![0.0; m];
                for chunk in gd.chunks(m.max(1)) {
                    for (o, v) in gr.iter_mut().zip(chunk) {
                        *o += v;
                    }
                }
                let ta = self.like(a, gd.to_vec());
                let tr = self.like(row, gr);
                self.acc(a, ta);
                self.acc(row, tr);
            }
            Op::MulScalar(a, s) => {
                let c = self.nodes[s.0].value.data()[0];
                let gs = dot(gd, self.nodes[a.0].value.data());
                let ta = self.like(a, gd.iter().map(|v| v * c).collect());
                let ts = self.like(s, vec![gs]);
                self.acc(a, ta);
                self.acc(s, ts);
            }
            Op::AddScalar(a, s) => {
                let gs = gd.iter().sum();
                let ta = self.like(a, gd.to_vec());
                let ts = self.like(s, vec![gs]);
                self.acc(a, ta);
                self.acc(s, ts);
            }
            Op::Tanh(x) => {
                let t = self.like(x, gd.iter().zip(y.data()).map(|(g, y)| g * (1.0 - y * y)).collect());
                self.acc(x, t);
            }
            Op::Sigmoid(x) => {
                let t = self.like(x, gd.iter().zip(y.data()).map(|(g, y)| g * y * (1.0 - y)).collect());
                self.acc(x, t);
            }
            Op::Relu(x) => {
                let xv = self.nodes[x.0].value.data();
                let t = self.like(x, gd.iter().zip(xv).map(|(g, &v)| if v > 0.0 { *g } else { 0.0 }).collect());
                self.acc(x, t);
            }
            Op::Exp(x) => {
                let t = self.like(x, gd.iter().zip(y.data()).map(|(g, y)| g * y).collect());
                self.acc(x, t);
            }
            Op::SoftmaxRows(x) => {
                let (n, m) = dims(y);
                let yv = y.data();
                let mut gx = vec![0.0; n * m];
                for r in 0..n {
                    let (yr, gr) = (&yv[r * m..(r + 1) * m], &gd[r * m..(r + 1) * m]);
                    let s = dot(yr, gr);
                    for c in 0..m {
                        gx[r * m + c] = yr[c] * (gr[c] - s);
                    }
                }
                let t = self.like(x, gx);
                self.acc(x, t);
            }
            Op::LogSoftmaxRows(x) => {
                let (n, m) = dims(y);
                let yv = y.data();
                let mut gx = vec![0.0; n * m];
                for r in 0..n {
                    let gr = &gd[r * m..(r + 1) * m];
                    let s: f64 = gr.iter().sum();
                    for c in 0..m {
                        gx[r * m + c] = gr[c] - yv[r * m + c].exp() * s;
                    }
                }
                let t = self.like(x, gx);
                self.acc(x, t);
            }
            Op::ConcatCols(ref xs) => {
                let total = dims(y).1;
                let n = dims(y).0;
                let mut off = 0;
                for &v in xs {
                    let m = self.dims(v).1;
                    if self.requires_grad(v) {
                        let mut part = Vec::with_capacity(n * m);
                        for r in 0..n {
                            part.extend_from_slice(&gd[r * total + off..r * total + off + m]);
                        }
                        let t = self.like(v, part);
                        self.acc(v, t);
                    }
                    off += m;
                }
            }
            Op::ConcatRows(ref xs) => {
                let mut off = 0;
                for &v in xs {
                    let len = self.nodes[v.0].value.len();
                    let t = self.like(v, gd[off..off + len].to_vec());
                    self.acc(v, t);
                    off += len;
                }
            }
            Op::Slice { x, r0, c0 } => {
                let (n, m) = dims(y);
                let (_, mx) = self.dims(x);
                let mut gx = vec![0.0; self.nodes[x.0].value.len()];
                for r in 0..n {
                    gx[(r0 + r) * mx + c0..(r0 + r) * mx + c0 + m].copy_from_slice(&gd[r * m..(r + 1) * m]);
                }
                let t = self.like(x, gx);
                self.acc(x, t);
            }
            Op::GatherRows(x, ref idx) => {
                let m = self.dims(x).1;
                let mut gx = vec![0.0; self.nodes[x.0].value.len()];
                for (r, &src) in idx.iter().enumerate() {
                    for (o, v) in gx[src * m..(src + 1) * m].iter_mut().zip(&gd[r * m..(r + 1) * m]) {
                        *o += v;
                    }
                }
                let t = self.like(x, gx);
                self.acc(x, t);
            }
            Op::Transpose(x) => {
                let (n, m) = self.dims(x);
                let mut gx = vec![0.0; n * m];
                for r in 0..n {
                    for c in 0..m {
                        gx[r * m + c] = gd[c * n + r];
                    }
                }
                let t = self.like(x, gx);
                self.acc(x, t);
            }
            Op::Reshape(x) => {
                let t = self.like(x, gd.to_vec());
                self.acc(x, t);
            }
            Op::Sum(x) => {
                let t = self.like(x, vec![gd[0]; self.nodes[x.0].value.len()]);
                self.acc(x, t);
            }
            Op::Mean(x) => {
                let n = self.nodes[x.0].value.len();
                let t = self.like(x, vec![gd[0] / n as f64; n]);
                self.acc(x, t);
            }
            Op::SumRows(x) => {
                let (n, _) = self.dims(x);
                let mut gx = Vec::with_capacity(self.nodes[x.0].value.len());
                for _ in 0..n {
                    gx.extend_from_slice(gd);
                }
                let t = self.like(x, gx);
                self.acc(x, t);
            }
            Op::SumSquares(x) => {
                let t = self.like(x, self.nodes[x.0].value.data().iter().map(|v| 2.0 * v * gd[0]).collect());
                self.acc(x, t);
            }
            Op::L2NormalizeRows(x) => {
                let (n, m) = dims(y);
                let (xv, yv) = (self.nodes[x.0].value.data(), y.data());
                let mut gx = vec![0.0; n * m];
                for r in 0..n {
                    let nrm = norm(&xv[r * m..(r + 1) * m]);
                    let (yr, gr) = (&yv[r * m..(r + 1) * m], &gd[r * m..(r + 1) * m]);
                    let s = dot(yr, gr);
                    for c in 0..m {
                        gx[r * m + c] = (gr[c] - yr[c] * s) / nrm;
                    }
                }
                let t = self.like(x, gx);
                self.acc(x, t);
            }
            Op::CosineRows(a, b) => {
                let (n, m) = self.dims(a);
                let (va, vb) = (self.nodes[a.0].value.data(), self.nodes[b.0].value.data());
                let (mut ga, mut gb) = (vec![0.0; n * m], vec![0.0; n * m]);
                for r in 0..n {
                    let (x, z) = (&va[r * m..(r + 1) * m], &vb[r * m..(r + 1) * m]);
                    let (nx, nz) = (norm(x), norm(z));
                    let cos = y.data()[r];
                    for c in 0..m {
                        ga[r * m + c] = gd[r] * (z[c] / (nx * nz) - cos * x[c] / (nx * nx));
                        gb[r * m + c] = gd[r] * (x[c] / (nx * nz) - cos * z[c] / (nz * nz));
                    }
                }
                let (ta, tb) = (self.like(a, ga), self.like(b, gb));
                self.acc(a, ta);
                self.acc(b, tb);
            }
        }
        Ok(())
    }
}

fn op_name(op: &Op) -> &'static str {
    match op {
        Op::Leaf => "leaf",
        Op::MatMul(..) => "matmul",
        Op::Add(..) => "add",
        Op::Sub(..) => "sub",
        Op::Mul(..) => "mul",
        Op::Scale(..) => "scale",
        Op::AddRow(..) => "add_row",
        Op::MulScalar(..) => "mul_scalar",
        Op::AddScalar(..) => "add_scalar",
        Op::Tanh(..) => "tanh",
        Op::Sigmoid(..) => "sigmoid",
        Op::Relu(..) => "relu",
        Op::Exp(..) => "exp",
        Op::SoftmaxRows(..) => "softmax_rows",
        Op::LogSoftmaxRows(..) => "log_softmax_rows",
        Op::ConcatCols(..) => "concat_cols",
        Op::ConcatRows(..) => "concat_rows",
        Op::Slice { .. } => "slice",
        Op::GatherRows(..) => "gather_rows",
        Op::Transpose(..) => "transpose",
        Op::Reshape(..) => "reshape",
        Op::Sum(..) => "sum",
        Op::Mean(..) => "mean",
        Op::SumRows(..) => "sum_rows",
        Op::SumSquares(..) => "sum_squares",
        Op::L2NormalizeRows(..) => "l2_normalize_rows",
        Op::CosineRows(..) => "cosine_rows",
    }
}

pub(crate) fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for v in row.iter_mut() {
        *v = (*v - mx).exp();
        s += *v;
    }
    row.iter_mut().for_each(|v| *v /= s);
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}
