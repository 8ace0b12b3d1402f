//! Attention-based mel synthesizer g(t, s, f0, z). A convolutional text
//! encoder produces one memory row per symbol, extended with the speaker
//! embedding s and style embedding z. An autoregressive decoder runs one step
//! per f0 frame, attends over the memory with content plus location features,
//! and predicts the next log-mel frame.
//!
//! With `pitch_conditioning` off the f0 inputs are replaced by zeros, which
//! gives the style-token-only baseline g(t, s, z).

mod train;

pub use train::{adapt, prepare_utterance, prepare_utterances, train, train_prepared, validation_loss, loss_gradient_error, MAX_ADAPT_SAMPLES, AdaptConfig, AdaptMode, PreparedUtterance, SynthTrainConfig, SynthTrainReport};

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
#[allow(unused_imports)] // shadowed by inherent methods when std is linked
use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Bound, Checkpoint, Graph, ParamStore, Tensor, Var};
use crate::corpus::{SymbolSequence, ALPHABET_SIZE};
use crate::dsp::{MelConfig, MelSpectrogram};
use crate::error::{Error, Result};
use crate::gst::{self, normalize_log_mel, Gst, GstConfig, GstLayer, StyleEmbedding, MEL_SCALE, MEL_SHIFT};
use crate::matrix::Matrix;
use crate::nn::{xavier, Conv1d, Gru, Linear};
use crate::speaker::SpeakerEmbedding;
use crate::yin::PitchContour;

pub const CHECKPOINT_KIND: &str = "synth/attention-v1";

/// Reference point and spread for the log-f0 input feature.
const LOG_F0_CENTER_HZ: f64 = 150.0;
const LOG_F0_SCALE: f64 = 0.5;
/// Width of the diagonal band used by the guided attention penalty.
pub(crate) const GUIDE_SIGMA: f64 = 0.2;

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SynthConfig {
    pub n_symbols: usize,
    pub embed_dim: usize,
    pub encoder_dim: usize,
    pub prenet_hidden: usize,
    pub prenet_out: usize,
    pub decoder_dim: usize,
    pub attention_dim: usize,
    pub output_hidden: usize,
    pub speaker_dim: usize,
    pub gst: GstConfig,
    pub mel: MelConfig,
    pub sample_rate_hz: u32,
    /// On: proposed model g(t, s, f0, z). Off: baseline g(t, s, z).
    pub pitch_conditioning: bool,
    pub max_decoder_steps: usize,
    pub prenet_dropout: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_symbols: ALPHABET_SIZE,
            embed_dim: 32,
            encoder_dim: 64,
            prenet_hidden: 64,
            prenet_out: 32,
            decoder_dim: 96,
            attention_dim: 32,
            output_hidden: 128,
            speaker_dim: 32,
            gst: GstConfig::default(),
            mel: MelConfig::synth(),
            sample_rate_hz: 22050,
            pitch_conditioning: true,
            max_decoder_steps: 1000,
            prenet_dropout: 0.7,
        }
    }
}

impl SynthConfig {
    /// Full-size dimensions.
    pub fn paper() -> Self {
        SynthConfig {
            embed_dim: 512,
            encoder_dim: 512,
            prenet_hidden: 256,
            prenet_out: 256,
            decoder_dim: 1024,
            attention_dim: 128,
            output_hidden: 1024,
            speaker_dim: 256,
            gst: GstConfig::paper(),
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            self.n_symbols,
            self.embed_dim,
            self.encoder_dim,
            self.prenet_hidden,
            self.prenet_out,
            self.decoder_dim,
            self.attention_dim,
            self.output_hidden,
            self.speaker_dim,
            self.max_decoder_steps,
        ];
        if dims.contains(&0) {
            return Err(Error::config("synthesizer dimensions must be >= 1"));
        }
        if !(0.0..1.0).contains(&self.prenet_dropout) {
            return Err(Error::config(format!("prenet dropout {} outside [0, 1)", self.prenet_dropout)));
        }
        self.gst.validate()?;
        self.mel.validate(self.sample_rate_hz)?;
        if self.gst.n_mels != self.mel.n_mels {
            return Err(Error::config(format!("style tokens read {} mel channels, synthesizer emits {}", self.gst.n_mels, self.mel.n_mels)));
        }
        Ok(())
    }

    pub fn memory_dim(&self) -> usize {
        self.encoder_dim + self.speaker_dim + self.gst.style_dim
    }
}

/// Which half of the model a parameter belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamGroup {
    /// Symbol embeddings, text encoder and style tokens.
    Encoder,
    /// Prenet, attention, recurrent decoder and output projection.
    Decoder,
}

pub fn param_group(name: &str) -> Result<ParamGroup> {
    if name.starts_with("enc.") || name.starts_with(gst::PARAM_PREFIX) {
        Ok(ParamGroup::Encoder)
    } else if name.starts_with("dec.") {
        Ok(ParamGroup::Decoder)
    } else {
        Err(Error::invalid(format!("parameter {} belongs to no group", name)))
    }
}

/// Decoder-step × encoder-step attention map.
#[derive(Debug, Clone, PartialEq)]
pub struct Rhythm(Matrix);

impl Rhythm {
    pub fn new(weights: Matrix) -> Result<Self> {
        if weights.rows() == 0 || weights.cols() == 0 {
            return Err(Error::Empty("rhythm"));
        }
        for (t, row) in weights.iter_rows().enumerate() {
            if row.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
                return Err(Error::invalid(format!("rhythm row {} has negative or non-finite weights", t)));
            }
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > 1e-6 {
                return Err(Error::invalid(format!("rhythm row {} sums to {}", t, s)));
            }
        }
        Ok(Rhythm(weights))
    }

    pub fn weights(&self) -> &Matrix {
        &self.0
    }

    pub fn decoder_steps(&self) -> usize {
        self.0.rows()
    }

    pub fn encoder_steps(&self) -> usize {
        self.0.cols()
    }

    pub fn into_matrix(self) -> Matrix {
        self.0
    }

    /// Attention-weighted encoder position of each decoder step.
    pub fn centers_of_mass(&self) -> Vec<f64> {
        self.0.iter_rows().map(|r| r.iter().enumerate().map(|(j, w)| j as f64 * w).sum()).collect()
    }

    /// Share of consecutive decoder steps whose center of mass does not move
    /// backwards (tolerance 1e-9).
    pub fn monotonic_fraction(&self) -> f64 {
        let c = self.centers_of_mass();
        if c.len() < 2 {
            return 1.0;
        }
        let ok = c.windows(2).filter(|w| w[1] >= w[0] - 1e-9).count();
        ok as f64 / (c.len() - 1) as f64
    }

    /// Frames spent on each encoder step when every decoder step is
    /// assigned to its most attended symbol.
    pub fn hard_durations(&self) -> Vec<usize> {
        let mut d = vec![0; self.encoder_steps()];
        for r in self.0.iter_rows() {
            let j = r.iter().enumerate().max_by(|a, b| a.1.partial_cmp(b.1).unwrap_or(core::cmp::Ordering::Equal)).map(|p| p.0).unwrap_or(0);
            d[j] += 1;
        }
        d
    }
}

/// Everything a decoder pass is conditioned on, besides the parameters.
#[derive(Debug, Clone, Copy)]
pub struct Conditioning<'a> {
    pub symbols: &'a SymbolSequence,
    pub speaker: &'a SpeakerEmbedding,
    /// Defines the number of decoder steps.
    pub f0: &'a PitchContour,
    pub style: &'a StyleEmbedding,
}

/// Columns of the f0 feature matrix ahead of the harmonic template.
pub(crate) const F0_SCALARS: usize = 2;

/// Input features for one decoder step: normalized log-f0, a voicing flag
/// and a harmonic template over the mel channels. All zeros when unvoiced
/// or when pitch conditioning is off.
pub fn f0_features(f0: &PitchContour, cfg: &SynthConfig) -> Result<Tensor> {
    let t = f0.len();
    let width = F0_SCALARS + cfg.mel.n_mels;
    let mut data = vec![0.0; t * width];
    if cfg.pitch_conditioning {
        let template = HarmonicTemplate::new(&cfg.mel, cfg.sample_rate_hz)?;
        for (i, (&hz, &v)) in f0.f0_hz().iter().zip(f0.voiced()).enumerate() {
            if v && hz > 0.0 {
                let row = &mut data[i * width..(i + 1) * width];
                row[0] = (hz / LOG_F0_CENTER_HZ).ln() / LOG_F0_SCALE;
                row[1] = 1.0;
                template.fill(hz, &mut row[F0_SCALARS..]);
            }
        }
    }
    Tensor::matrix(t, width, data)
}

/// Log ratio between the mel energies of a flat-amplitude harmonic comb and
/// those of a spectrum with the same mean level. Near zero in channels too
/// wide to resolve harmonics; alternating sign where they are resolved.
struct HarmonicTemplate {
    fb: Matrix,
    flat: Vec<f64>,
    bin_hz: f64,
    /// Analysis-window length in FFT bins per main-lobe unit.
    lobe_scale: f64,
    max_hz: f64,
}

/// Channels between harmonics sit at this fraction of the flat level.
const TEMPLATE_FLOOR: f64 = 0.1;

impl HarmonicTemplate {
    fn new(mel: &MelConfig, sample_rate_hz: u32) -> Result<Self> {
        let fb = crate::dsp::mel_filterbank(mel, sample_rate_hz)?;
        let flat = fb.iter_rows().map(|r| r.iter().sum()).collect();
        Ok(HarmonicTemplate {
            fb,
            flat,
            bin_hz: sample_rate_hz as f64 / mel.frame.fft_size as f64,
            lobe_scale: mel.frame.window_length as f64 / mel.frame.fft_size as f64,
            max_hz: mel.fmax_hz,
        })
    }

    /// Main-lobe magnitude of a Hann window, `u` in lobe units, 1 at 0.
    fn lobe(u: f64) -> f64 {
        if u.abs() >= 4.0 {
            return 0.0;
        }
        if (u.abs() - 1.0).abs() < 1e-9 {
            return 0.5;
        }
        if u.abs() < 1e-12 {
            return 1.0;
        }
        let x = core::f64::consts::PI * u;
        (x.sin() / x / (1.0 - u * u)).abs()
    }

    fn fill(&self, f0_hz: f64, out: &mut [f64]) {
        let bins = self.fb.cols();
        let mut spectrum = vec![0.0; bins];
        let reach = (4.0 / self.lobe_scale).ceil() as i64;
        let mut h = 1.0;
        while h * f0_hz <= self.max_hz + reach as f64 * self.bin_hz {
            let centre = h * f0_hz / self.bin_hz;
            let lo = (centre.floor() as i64 - reach).max(0);
            let hi = (centre.ceil() as i64 + reach).min(bins as i64 - 1);
            for k in lo..=hi {
                spectrum[k as usize] += Self::lobe((k as f64 - centre) * self.lobe_scale);
            }
            h += 1.0;
        }
        let last = ((self.max_hz / self.bin_hz) as usize).clamp(1, bins - 1);
        let mean = spectrum[1..=last].iter().sum::<f64>() / last as f64;
        for (c, slot) in out.iter_mut().enumerate() {
            let e: f64 = self.fb.row(c).iter().zip(&spectrum).map(|(w, s)| w * s).sum();
            let flat = self.flat[c] * mean;
            *slot = if flat > 0.0 { ((e + TEMPLATE_FLOOR * flat) / ((1.0 + TEMPLATE_FLOOR) * flat)).ln() } else { 0.0 };
        }
    }
}

pub(crate) fn dropout_mask<R: Rng + ?Sized>(rng: &mut R, n: usize, p: f64) -> Tensor {
    let keep = 1.0 / (1.0 - p);
    Tensor::row((0..n).map(|_| if rng.random::<f64>() < p { 0.0 } else { keep }).collect())
}

/// Penalty weights that are near zero along the normalized diagonal.
pub(crate) fn guide_matrix(t_dec: usize, t_enc: usize) -> Tensor {
    let mut data = Vec::with_capacity(t_dec * t_enc);
    for t in 0..t_dec {
        for j in 0..t_enc {
            let d = (j as f64 + 0.5) / t_enc as f64 - (t as f64 + 0.5) / t_dec as f64;
            data.push(1.0 - (-d * d / (2.0 * GUIDE_SIGMA * GUIDE_SIGMA)).exp());
        }
    }
    Tensor::matrix(t_dec, t_enc, data).expect("dims match")
}

pub(crate) fn init_params(cfg: &SynthConfig, seed: u64) -> Result<ParamStore> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = ParamStore::new();
    let n_mels = cfg.mel.n_mels;
    let emb = (0..cfg.n_symbols * cfg.embed_dim).map(|_| rng.random_range(-0.5..0.5)).collect();
    p.insert("enc.embed", Tensor::matrix(cfg.n_symbols, cfg.embed_dim, emb)?)?;
    Conv1d::init(&mut p, "enc.conv1", cfg.embed_dim, cfg.encoder_dim, 3, &mut rng)?;
    Conv1d::init(&mut p, "enc.conv2", cfg.encoder_dim, cfg.encoder_dim, 3, &mut rng)?;
    gst::init_params(&mut p, &cfg.gst, &mut rng)?;
    Linear::init(&mut p, "dec.pre1", n_mels, cfg.prenet_hidden, &mut rng)?;
    Linear::init(&mut p, "dec.pre2", cfg.prenet_hidden, cfg.prenet_out, &mut rng)?;
    Gru::init(&mut p, "dec.gru", cfg.prenet_out + cfg.memory_dim() + F0_SCALARS, cfg.decoder_dim, &mut rng)?;
    p.insert("dec.att.query", xavier(&mut rng, cfg.decoder_dim, cfg.attention_dim))?;
    p.insert("dec.att.memory", xavier(&mut rng, cfg.memory_dim(), cfg.attention_dim))?;
    p.insert("dec.att.location", xavier(&mut rng, 3, cfg.attention_dim))?;
    p.insert("dec.att.bias", Tensor::zeros(&[1, cfg.attention_dim]))?;
    p.insert("dec.att.v", xavier(&mut rng, cfg.attention_dim, 1))?;
    Linear::init(&mut p, "dec.out1", cfg.decoder_dim + cfg.memory_dim() + F0_SCALARS + n_mels, cfg.output_hidden, &mut rng)?;
    Linear::init(&mut p, "dec.out2", cfg.output_hidden, n_mels, &mut rng)?;
    p.insert("dec.harmonics", Tensor::zeros(&[n_mels, n_mels]))?;
    Ok(p)
}

/// How the decoder obtains the previous frame.
#[derive(Debug, Clone, Copy)]
pub(crate) enum Feed<'a> {
    /// Ground-truth frames (raw log-mel), one per decoder step.
    Teacher(&'a Matrix),
    /// The decoder's own previous prediction.
    Free,
}

pub(crate) struct Decoded {
    pub frames: Var,
    pub alignment: Var,
}

/// The network bound into one graph.
pub(crate) struct Net {
    embed: Var,
    enc1: Conv1d,
    enc2: Conv1d,
    gst: GstLayer,
    pre1: Linear,
    pre2: Linear,
    gru: Gru,
    att_query: Var,
    att_memory: Var,
    att_location: Var,
    att_bias: Var,
    att_v: Var,
    out1: Linear,
    out2: Linear,
    harmonics: Var,
    n_mels: usize,
    floor: f64,
    dropout: f64,
}

impl Net {
    pub fn bind(b: &Bound, g: &Graph, cfg: &SynthConfig) -> Result<Self> {
        Ok(Net {
            embed: b.var("enc.embed")?,
            enc1: Conv1d::bind(b, "enc.conv1", 3, 1, 1)?,
            enc2: Conv1d::bind(b, "enc.conv2", 3, 1, 1)?,
            gst: GstLayer::bind(b, g, &cfg.gst)?,
            pre1: Linear::bind(b, "dec.pre1")?,
            pre2: Linear::bind(b, "dec.pre2")?,
            gru: Gru::bind(b, g, "dec.gru")?,
            att_query: b.var("dec.att.query")?,
            att_memory: b.var("dec.att.memory")?,
            att_location: b.var("dec.att.location")?,
            att_bias: b.var("dec.att.bias")?,
            att_v: b.var("dec.att.v")?,
            out1: Linear::bind(b, "dec.out1")?,
            out2: Linear::bind(b, "dec.out2")?,
            harmonics: b.var("dec.harmonics")?,
            n_mels: cfg.mel.n_mels,
            floor: cfg.mel.log_floor_value(),
            dropout: cfg.prenet_dropout,
        })
    }

    /// Style embedding from a raw log-mel matrix.
    pub fn style(&self, g: &mut Graph, mel: &Matrix) -> Result<Var> {
        let x = g.constant(normalize_log_mel(mel))?;
        Ok(self.gst.forward(g, x)?.0)
    }

    /// Memory rows [encoder output; s; z], one per symbol.
    pub fn memory(&self, g: &mut Graph, symbols: &[u8], speaker: &[f64], style: Var) -> Result<Var> {
        let n = symbols.len();
        let idx: Vec<usize> = symbols.iter().map(|&s| s as usize).collect();
        let e = g.gather_rows(self.embed, &idx)?;
        let h = self.enc1.forward(g, e)?;
        let h = g.relu(h)?;
        let h = self.enc2.forward(g, h)?;
        let h = g.relu(h)?;
        let ones = g.constant(Tensor::full(&[n, 1], 1.0))?;
        let s = g.constant(Tensor::row(speaker.to_vec()))?;
        let s = g.matmul(ones, s)?;
        let z = g.matmul(ones, style)?;
        g.concat_cols(&[h, s, z])
    }

    /// Runs one decoder step per row of `f0`. Dropout masks are drawn from
    /// `rng` in a fixed order, so a seed reproduces a pass exactly.
    pub fn decode<R: Rng + ?Sized>(&self, g: &mut Graph, memory: Var, f0: &Tensor, feed: Feed<'_>, rhythm: Option<&Matrix>, rng: &mut R) -> Result<Decoded> {
        let t_dec = f0.rows();
        if f0.cols() != F0_SCALARS + self.n_mels {
            return Err(Error::shape("decode", format!("{} f0 feature columns, need {}", f0.cols(), F0_SCALARS + self.n_mels)));
        }
        let t_enc = g.value(memory).rows();
        let m_dim = g.value(memory).cols();
        if let Feed::Teacher(m) = feed {
            if m.rows() != t_dec || m.cols() != self.n_mels {
                return Err(Error::shape("decode", format!("{}x{} target frames for {} steps", m.rows(), m.cols(), t_dec)));
            }
        }
        if let Some(r) = rhythm {
            if r.rows() != t_dec || r.cols() != t_enc {
                return Err(Error::shape("decode", format!("rhythm is {}x{}, need {}x{}", r.rows(), r.cols(), t_dec, t_enc)));
            }
        }
        let keys = g.matmul(memory, self.att_memory)?;
        let keys = g.add_row(keys, self.att_bias)?;
        let mut shift = Tensor::zeros(&[t_enc, t_enc]);
        for j in 0..t_enc.saturating_sub(1) {
            shift.data_mut()[j * t_enc + j + 1] = 1.0;
        }
        let shift = g.constant(shift)?;
        let mut first = vec![0.0; t_enc];
        first[0] = 1.0;
        let mut a_prev = g.constant(Tensor::row(first))?;
        let mut a_cum = a_prev;
        let mut h = g.constant(Tensor::zeros(&[1, self.gru.hidden]))?;
        let mut ctx = g.constant(Tensor::zeros(&[1, m_dim]))?;
        let mut prev: Vec<f64> = vec![self.floor; self.n_mels];
        let mut frames = Vec::with_capacity(t_dec);
        let mut alphas = Vec::with_capacity(t_dec);
        for t in 0..t_dec {
            let x = g.constant(Tensor::row(prev.iter().map(|v| (v + MEL_SHIFT) / MEL_SCALE).collect()))?;
            let p = self.pre1.forward(g, x)?;
            let p = g.relu(p)?;
            let p = self.apply_dropout(g, p, rng)?;
            let p = self.pre2.forward(g, p)?;
            let p = g.relu(p)?;
            let p = self.apply_dropout(g, p, rng)?;
            let f_all = f0.row_slice(t);
            let f = g.constant(Tensor::row(f_all[..F0_SCALARS].to_vec()))?;
            let harm = g.constant(Tensor::row(f_all[F0_SCALARS..].to_vec()))?;
            let inp = g.concat_cols(&[p, ctx, f])?;
            h = self.gru.step(g, inp, h)?;
            let a = match rhythm {
                Some(r) => g.constant(Tensor::row(r.row(t).to_vec()))?,
                None => {
                    let q = g.matmul(h, self.att_query)?;
                    let shifted = g.matmul(a_prev, shift)?;
                    let loc = g.concat_rows(&[a_prev, shifted, a_cum])?;
                    let loc = g.transpose(loc)?;
                    let loc = g.matmul(loc, self.att_location)?;
                    let e = g.add(keys, loc)?;
                    let e = g.add_row(e, q)?;
                    let e = g.tanh(e)?;
                    let sc = g.matmul(e, self.att_v)?;
                    let sc = g.transpose(sc)?;
                    g.softmax_rows(sc)?
                }
            };
            ctx = g.matmul(a, memory)?;
            let o = g.concat_cols(&[h, ctx, f, harm])?;
            let o = self.out1.forward(g, o)?;
            let o = g.relu(o)?;
            let y = self.out2.forward(g, o)?;
            let direct = g.matmul(harm, self.harmonics)?;
            let y = g.add(y, direct)?;
            prev = match feed {
                Feed::Teacher(m) => m.row(t).to_vec(),
                Feed::Free => g.value(y).data().to_vec(),
            };
            a_cum = g.add(a_cum, a)?;
            a_prev = a;
            frames.push(y);
            alphas.push(a);
        }
        Ok(Decoded { frames: g.concat_rows(&frames)?, alignment: g.concat_rows(&alphas)? })
    }

    fn apply_dropout<R: Rng + ?Sized>(&self, g: &mut Graph, x: Var, rng: &mut R) -> Result<Var> {
        if self.dropout == 0.0 {
            return Ok(x);
        }
        let mask = g.constant(dropout_mask(rng, g.value(x).cols(), self.dropout))?;
        g.mul(x, mask)
    }
}

/// A trained (or freshly initialized) synthesizer.
#[derive(Debug, Clone)]
pub struct Synthesizer {
    cfg: SynthConfig,
    params: ParamStore,
}

impl Synthesizer {
    pub fn new(cfg: SynthConfig, seed: u64) -> Result<Self> {
        let params = init_params(&cfg, seed)?;
        Ok(Synthesizer { cfg, params })
    }

    pub fn from_params(cfg: SynthConfig, params: ParamStore) -> Result<Self> {
        let reference = init_params(&cfg, 0)?;
        reference.check_layout(&params)?;
        Ok(Synthesizer { cfg, params })
    }

    pub fn from_checkpoint(cfg: SynthConfig, ck: Checkpoint) -> Result<Self> {
        if ck.kind != CHECKPOINT_KIND {
            return Err(Error::Format(format!("expected a {} checkpoint, found {}", CHECKPOINT_KIND, ck.kind)));
        }
        Synthesizer::from_params(cfg, ck.params)
    }

    pub fn to_checkpoint(&self, meta: String) -> Checkpoint {
        Checkpoint { kind: CHECKPOINT_KIND.into(), meta, params: self.params.clone() }
    }

    pub fn config(&self) -> &SynthConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    /// Frozen copy of the style-token sub-network.
    pub fn gst(&self) -> Result<Gst> {
        Gst::from_store(self.cfg.gst.clone(), &self.params)
    }

    pub fn style_embedding(&self, mel: &MelSpectrogram) -> Result<StyleEmbedding> {
        self.gst()?.style_embedding(mel)
    }

    fn check_conditioning(&self, c: &Conditioning<'_>) -> Result<()> {
        if c.f0.is_empty() {
            return Err(Error::Empty("f0 contour"));
        }
        if c.f0.len() > self.cfg.max_decoder_steps {
            return Err(Error::invalid(format!("{} decoder steps exceed the limit of {}", c.f0.len(), self.cfg.max_decoder_steps)));
        }
        if c.speaker.dim() != self.cfg.speaker_dim {
            return Err(Error::shape("conditioning", format!("speaker embedding dim {} vs {}", c.speaker.dim(), self.cfg.speaker_dim)));
        }
        if c.style.dim() != self.cfg.gst.style_dim {
            return Err(Error::shape("conditioning", format!("style embedding dim {} vs {}", c.style.dim(), self.cfg.gst.style_dim)));
        }
        if let Some(&s) = c.symbols.ids().iter().find(|&&s| s as usize >= self.cfg.n_symbols) {
            return Err(Error::invalid(format!("symbol {} outside the model's alphabet", s)));
        }
        Ok(())
    }

    fn run(&self, c: &Conditioning<'_>, feed: Feed<'_>, rhythm: Option<&Rhythm>, seed: u64) -> Result<(Matrix, Matrix)> {
        self.check_conditioning(c)?;
        if let Some(r) = rhythm {
            if r.encoder_steps() != c.symbols.len() {
                return Err(Error::shape("synthesize", format!("rhythm covers {} symbols, text has {}", r.encoder_steps(), c.symbols.len())));
            }
            if r.decoder_steps() != c.f0.len() {
                return Err(Error::shape("synthesize", format!("rhythm has {} frames, f0 has {}", r.decoder_steps(), c.f0.len())));
            }
        }
        let mut g = Graph::new();
        let b = self.params.bind_with(&mut g, |_| false)?;
        let net = Net::bind(&b, &g, &self.cfg)?;
        let z = g.constant(Tensor::row(c.style.as_slice().to_vec()))?;
        let mem = net.memory(&mut g, c.symbols.ids(), c.speaker.as_slice(), z)?;
        let f0 = f0_features(c.f0, &self.cfg)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let out = net.decode(&mut g, mem, &f0, feed, rhythm.map(|r| r.weights()), &mut rng)?;
        Ok((g.value(out.frames).to_matrix(), g.value(out.alignment).to_matrix()))
    }

    /// Free-running synthesis for exactly `c.f0.len()` frames. A supplied
    /// rhythm replaces the attention weights row by row.
    pub fn synthesize(&self, c: &Conditioning<'_>, rhythm: Option<&Rhythm>, seed: u64) -> Result<MelSpectrogram> {
        let (frames, _) = self.run(c, Feed::Free, rhythm, seed)?;
        MelSpectrogram::new(frames, self.cfg.mel)
    }

    /// Like [`synthesize`](Self::synthesize) but also returns the attention map used.
    pub fn synthesize_with_alignment(&self, c: &Conditioning<'_>, rhythm: Option<&Rhythm>, seed: u64) -> Result<(MelSpectrogram, Rhythm)> {
        let (frames, align) = self.run(c, Feed::Free, rhythm, seed)?;
        Ok((MelSpectrogram::new(frames, self.cfg.mel)?, Rhythm::new(align)?))
    }

    /// Teacher-forced pass over the ground-truth frames of `mel`; returns
    /// the attention map. The f0 contour is resampled to the mel frame count.
    pub fn forced_align(&self, c: &Conditioning<'_>, mel: &MelSpectrogram, seed: u64) -> Result<Rhythm> {
        if mel.n_frames() == 0 {
            return Err(Error::Empty("mel"));
        }
        if mel.n_mels() != self.cfg.mel.n_mels {
            return Err(Error::shape("forced_align", format!("{} mel channels, model uses {}", mel.n_mels(), self.cfg.mel.n_mels)));
        }
        let f0 = c.f0.resample_nearest(mel.n_frames());
        let c = Conditioning { f0: &f0, ..*c };
        let (_, align) = self.run(&c, Feed::Teacher(mel.frames()), None, seed)?;
        Rhythm::new(align)
    }

    /// Teacher-forced mean squared error against `mel`.
    pub fn teacher_forced_mse(&self, c: &Conditioning<'_>, mel: &MelSpectrogram, seed: u64) -> Result<f64> {
        let f0 = c.f0.resample_nearest(mel.n_frames());
        let c = Conditioning { f0: &f0, ..*c };
        let (frames, _) = self.run(&c, Feed::Teacher(mel.frames()), None, seed)?;
        frames.mse(mel.frames())
    }
}

#[cfg(test)]
mod tests;
