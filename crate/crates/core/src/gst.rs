//! Global style tokens: a reference encoder turns a mel spectrogram into a
//! query, which attends over a small bank of learned tokens (one softmax per
//! head). The concatenated per-head value mixtures form the style embedding.

use alloc::format;
use alloc::vec::Vec;
#[allow(unused_imports)] // shadowed by inherent methods when std is linked
use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::autodiff::{norm, Bound, Graph, ParamStore, Tensor, Var};
use crate::dsp::MelSpectrogram;
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::nn::{Conv1d, Gru, Linear};

/// Prefix shared by every style-token parameter name.
pub const PARAM_PREFIX: &str = "gst.";

const TOKEN_INIT_SCALE: f64 = 0.5;

/// Log-mel values are shifted and scaled into roughly [-1.5, 2] before
/// entering any learned layer.
pub(crate) const MEL_SHIFT: f64 = 6.0;
pub(crate) const MEL_SCALE: f64 = 4.0;

pub(crate) fn normalize_log_mel(frames: &Matrix) -> Tensor {
    let data = frames.as_slice().iter().map(|v| (v + MEL_SHIFT) / MEL_SCALE).collect();
    Tensor::matrix(frames.rows(), frames.cols(), data).expect("dims match")
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct GstConfig {
    pub n_tokens: usize,
    pub n_heads: usize,
    pub style_dim: usize,
    pub ref_channels: usize,
    pub ref_hidden: usize,
    pub n_mels: usize,
}

impl Default for GstConfig {
    fn default() -> Self {
        GstConfig { n_tokens: 10, n_heads: 4, style_dim: 32, ref_channels: 32, ref_hidden: 32, n_mels: 80 }
    }
}

impl GstConfig {
    pub fn paper() -> Self {
        GstConfig { style_dim: 256, ref_channels: 128, ref_hidden: 128, ..Default::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_tokens == 0 || self.n_heads == 0 || self.style_dim == 0 || self.ref_channels == 0 || self.ref_hidden == 0 || self.n_mels == 0 {
            return Err(Error::config("style token dimensions must be >= 1"));
        }
        if self.style_dim % self.n_heads != 0 {
            return Err(Error::config(format!("style_dim {} not divisible by {} heads", self.style_dim, self.n_heads)));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.style_dim / self.n_heads
    }
}

/// Adds all style-token parameters to `store`.
pub fn init_params<R: Rng + ?Sized>(store: &mut ParamStore, cfg: &GstConfig, rng: &mut R) -> Result<()> {
    cfg.validate()?;
    Conv1d::init(store, "gst.conv1", cfg.n_mels, cfg.ref_channels, 3, rng)?;
    Conv1d::init(store, "gst.conv2", cfg.ref_channels, cfg.ref_channels, 3, rng)?;
    Gru::init(store, "gst.gru", cfg.ref_channels, cfg.ref_hidden, rng)?;
    Linear::init(store, "gst.query", cfg.ref_hidden, cfg.style_dim, rng)?;
    let tokens = (0..cfg.n_tokens * cfg.style_dim)
        .map(|_| { let v: f64 = StandardNormal.sample(rng); TOKEN_INIT_SCALE * v })
        .collect();
    store.insert("gst.tokens", Tensor::matrix(cfg.n_tokens, cfg.style_dim, tokens)?)?;
    store.insert("gst.key.w", crate::nn::xavier(rng, cfg.style_dim, cfg.style_dim))?;
    store.insert("gst.value.w", crate::nn::xavier(rng, cfg.style_dim, cfg.style_dim))?;
    Ok(())
}

/// Style-token layers bound into a graph.
#[derive(Debug, Clone)]
pub struct GstLayer {
    conv1: Conv1d,
    conv2: Conv1d,
    gru: Gru,
    bank: BankVars,
}

#[derive(Debug, Clone, Copy)]
struct BankVars {
    query: Linear,
    tokens: Var,
    key: Var,
    value: Var,
    n_heads: usize,
}

impl BankVars {
    fn bind(b: &Bound, n_heads: usize) -> Result<Self> {
        Ok(BankVars {
            query: Linear::bind(b, "gst.query")?,
            tokens: b.var("gst.tokens")?,
            key: b.var("gst.key.w")?,
            value: b.var("gst.value.w")?,
            n_heads,
        })
    }

    /// Returns z (1 × style_dim) and one 1 × K weight row per head.
    fn attend(&self, g: &mut Graph, query: Var) -> Result<(Var, Vec<Var>)> {
        let q = self.query.forward(g, query)?;
        let t = g.tanh(self.tokens)?;
        let keys = g.matmul(t, self.key)?;
        let values = g.matmul(t, self.value)?;
        let d = g.value(q).cols();
        let k = g.value(keys).rows();
        let dh = d / self.n_heads;
        let inv = 1.0 / (dh as f64).sqrt();
        let mut parts = Vec::with_capacity(self.n_heads);
        let mut weights = Vec::with_capacity(self.n_heads);
        for h in 0..self.n_heads {
            let cols = h * dh..(h + 1) * dh;
            let qh = g.slice(q, 0..1, cols.clone())?;
            let kh = g.slice(keys, 0..k, cols.clone())?;
            let vh = g.slice(values, 0..k, cols)?;
            let kt = g.transpose(kh)?;
            let logits = g.matmul(qh, kt)?;
            let logits = g.scale(logits, inv)?;
            let a = g.softmax_rows(logits)?;
            parts.push(g.matmul(a, vh)?);
            weights.push(a);
        }
        let z = g.concat_cols(&parts)?;
        Ok((z, weights))
    }
}

impl GstLayer {
    pub fn bind(b: &Bound, g: &Graph, cfg: &GstConfig) -> Result<Self> {
        Ok(GstLayer {
            conv1: Conv1d::bind(b, "gst.conv1", 3, 2, 1)?,
            conv2: Conv1d::bind(b, "gst.conv2", 3, 2, 1)?,
            gru: Gru::bind(b, g, "gst.gru")?,
            bank: BankVars::bind(b, cfg.n_heads)?,
        })
    }

    /// Reference encoder: two strided convolutions, then the last GRU state.
    pub fn reference_query(&self, g: &mut Graph, mel: Var) -> Result<Var> {
        if g.value(mel).rows() == 0 {
            return Err(Error::Empty("mel"));
        }
        let h = self.conv1.forward(g, mel)?;
        let h = g.relu(h)?;
        let h = self.conv2.forward(g, h)?;
        let h = g.relu(h)?;
        let steps = g.value(h).rows();
        let states = self.gru.run(g, h, steps, 1)?;
        Ok(*states.last().expect("at least one step"))
    }

    /// Style embedding (1 × style_dim) and per-head attention rows for a
    /// normalized mel input.
    pub fn forward(&self, g: &mut Graph, mel: Var) -> Result<(Var, Vec<Var>)> {
        let q = self.reference_query(g, mel)?;
        self.bank.attend(g, q)
    }
}

/// The latent style embedding z.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct StyleEmbedding(Vec<f64>);

impl StyleEmbedding {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Empty("style embedding"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("style embedding has non-finite entries"));
        }
        Ok(StyleEmbedding(values))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn cosine(&self, other: &StyleEmbedding) -> f64 {
        let d: f64 = self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum();
        d / (norm(&self.0) * norm(&other.0)).max(1e-12)
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    /// Element-wise mean of several embeddings of equal size.
    pub fn mean(items: &[StyleEmbedding]) -> Result<Self> {
        let first = items.first().ok_or(Error::Empty("style embeddings"))?;
        let mut acc = alloc::vec![0.0; first.dim()];
        for z in items {
            if z.dim() != first.dim() {
                return Err(Error::shape("style mean", format!("{} vs {}", z.dim(), first.dim())));
            }
            for (a, v) in acc.iter_mut().zip(&z.0) {
                *a += v;
            }
        }
        let n = items.len() as f64;
        StyleEmbedding::new(acc.into_iter().map(|a| a / n).collect())
    }
}

fn subset(store: &ParamStore, names: &[&str]) -> Result<ParamStore> {
    let mut out = ParamStore::new();
    for n in names {
        out.insert(n, store.get(n)?.clone())?;
    }
    Ok(out)
}

const BANK_PARAMS: [&str; 5] = ["gst.query.w", "gst.query.b", "gst.tokens", "gst.key.w", "gst.value.w"];

/// Token matrix plus query, key and value projections.
#[derive(Debug, Clone)]
pub struct TokenBank {
    n_heads: usize,
    params: ParamStore,
}

impl TokenBank {
    /// Builds a bank from explicit matrices: tokens K × d, query projection
    /// q_dim × d with bias 1 × d, key and value projections d × d.
    pub fn new(tokens: Matrix, n_heads: usize, query_w: Matrix, query_b: Vec<f64>, key_w: Matrix, value_w: Matrix) -> Result<Self> {
        let (k, d) = (tokens.rows(), tokens.cols());
        if k == 0 || d == 0 {
            return Err(Error::Empty("token bank"));
        }
        if n_heads == 0 || d % n_heads != 0 {
            return Err(Error::config(format!("token_dim {} not divisible by {} heads", d, n_heads)));
        }
        if query_w.cols() != d || query_b.len() != d || key_w.rows() != d || key_w.cols() != d || value_w.rows() != d || value_w.cols() != d {
            return Err(Error::shape("token bank", "projection sizes disagree with token_dim"));
        }
        let mut params = ParamStore::new();
        params.insert("gst.query.w", query_w.into())?;
        params.insert("gst.query.b", Tensor::row(query_b))?;
        params.insert("gst.tokens", tokens.into())?;
        params.insert("gst.key.w", key_w.into())?;
        params.insert("gst.value.w", value_w.into())?;
        Ok(TokenBank { n_heads, params })
    }

    pub fn from_params(store: &ParamStore, n_heads: usize) -> Result<Self> {
        let p = subset(store, &BANK_PARAMS)?;
        let get = |n: &str| p.get(n).map(|t| t.to_matrix());
        TokenBank::new(get("gst.tokens")?, n_heads, get("gst.query.w")?, p.get("gst.query.b")?.data().to_vec(), get("gst.key.w")?, get("gst.value.w")?)
    }

    pub fn n_tokens(&self) -> usize {
        self.params.get("gst.tokens").map(|t| t.rows()).unwrap_or(0)
    }

    pub fn n_heads(&self) -> usize {
        self.n_heads
    }

    pub fn query_dim(&self) -> usize {
        self.params.get("gst.query.w").map(|t| t.rows()).unwrap_or(0)
    }

    fn run(&self, query: &[f64]) -> Result<(Vec<f64>, Matrix)> {
        if query.len() != self.query_dim() {
            return Err(Error::shape("attention_weights", format!("query dim {} vs {}", query.len(), self.query_dim())));
        }
        let mut g = Graph::new();
        let b = self.params.bind_with(&mut g, |_| false)?;
        let vars = BankVars::bind(&b, self.n_heads)?;
        let q = g.constant(Tensor::row(query.to_vec()))?;
        let (z, weights) = vars.attend(&mut g, q)?;
        let mut w = Matrix::zeros(self.n_heads, self.n_tokens());
        for (h, a) in weights.iter().enumerate() {
            w.row_mut(h).copy_from_slice(g.value(*a).data());
        }
        Ok((g.value(z).data().to_vec(), w))
    }

    /// n_heads × K softmax weights for a raw (unprojected) query.
    pub fn attention_weights(&self, query: &[f64]) -> Result<Matrix> {
        self.run(query).map(|(_, w)| w)
    }

    /// Concatenated per-head value mixtures for a raw query.
    pub fn attend(&self, query: &[f64]) -> Result<StyleEmbedding> {
        StyleEmbedding::new(self.run(query)?.0)
    }

    /// K × d projected token values; head h owns columns h·d/H .. (h+1)·d/H.
    pub fn projected_values(&self) -> Result<Matrix> {
        let t = self.params.get("gst.tokens")?.to_matrix();
        let t = Matrix::from_vec(t.rows(), t.cols(), t.as_slice().iter().map(|v| v.tanh()).collect())?;
        t.matmul(&self.params.get("gst.value.w")?.to_matrix())
    }

    /// K × d projected token keys.
    pub fn projected_keys(&self) -> Result<Matrix> {
        let t = self.params.get("gst.tokens")?.to_matrix();
        let t = Matrix::from_vec(t.rows(), t.cols(), t.as_slice().iter().map(|v| v.tanh()).collect())?;
        t.matmul(&self.params.get("gst.key.w")?.to_matrix())
    }
}

/// Frozen reference encoder plus token bank, for inference outside a
/// training graph.
#[derive(Debug, Clone)]
pub struct Gst {
    cfg: GstConfig,
    params: ParamStore,
}

impl Gst {
    pub fn new<R: Rng + ?Sized>(cfg: GstConfig, rng: &mut R) -> Result<Self> {
        let mut params = ParamStore::new();
        init_params(&mut params, &cfg, rng)?;
        Ok(Gst { cfg, params })
    }

    /// Copies the style-token parameters out of a larger store.
    pub fn from_store(cfg: GstConfig, store: &ParamStore) -> Result<Self> {
        cfg.validate()?;
        let names: Vec<&str> = store.names().iter().map(|n| n.as_str()).filter(|n| n.starts_with(PARAM_PREFIX)).collect();
        let params = subset(store, &names)?;
        let gst = Gst { cfg, params };
        gst.check()?;
        Ok(gst)
    }

    fn check(&self) -> Result<()> {
        let mut reference = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        init_params(&mut reference, &self.cfg, &mut rng)?;
        for (name, t) in reference.iter() {
            if self.params.get(name)?.shape() != t.shape() {
                return Err(Error::shape("style tokens", format!("{} has unexpected shape", name)));
            }
        }
        Ok(())
    }

    pub fn config(&self) -> &GstConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn bank(&self) -> Result<TokenBank> {
        TokenBank::from_params(&self.params, self.cfg.n_heads)
    }

    fn forward(&self, mel: &MelSpectrogram) -> Result<(Vec<f64>, Matrix)> {
        if mel.n_frames() == 0 {
            return Err(Error::Empty("mel"));
        }
        if mel.n_mels() != self.cfg.n_mels {
            return Err(Error::shape("style_embedding", format!("{} mel channels, model expects {}", mel.n_mels(), self.cfg.n_mels)));
        }
        let mut g = Graph::new();
        let b = self.params.bind_with(&mut g, |_| false)?;
        let layer = GstLayer::bind(&b, &g, &self.cfg)?;
        let x = g.constant(normalize_log_mel(mel.frames()))?;
        let (z, weights) = layer.forward(&mut g, x)?;
        let mut w = Matrix::zeros(self.cfg.n_heads, self.cfg.n_tokens);
        for (h, a) in weights.iter().enumerate() {
            w.row_mut(h).copy_from_slice(g.value(*a).data());
        }
        Ok((g.value(z).data().to_vec(), w))
    }

    pub fn style_embedding(&self, mel: &MelSpectrogram) -> Result<StyleEmbedding> {
        StyleEmbedding::new(self.forward(mel)?.0)
    }

    /// Per-head token weights chosen for `mel`.
    pub fn token_weights(&self, mel: &MelSpectrogram) -> Result<Matrix> {
        Ok(self.forward(mel)?.1)
    }
}
