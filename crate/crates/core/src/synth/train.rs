//! Teacher-forced training and few-shot adaptation.

use alloc::format;
use alloc::vec::Vec;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{f0_features, guide_matrix, init_params, param_group, Feed, Net, ParamGroup, Synthesizer, SynthConfig};
use crate::autodiff::{Adam, AdamConfig, Bound, Graph, ParamStore, Tensor, Var};
use crate::corpus::{mix_seed, Corpus, StyleClass, SymbolSequence, Utterance};
use crate::dsp::{mel_spectrogram, MelSpectrogram, Waveform};
use crate::error::{Error, Result};
use crate::speaker::{SpeakerEmbedding, SpeakerEncoder};
use crate::yin::{extract_pitch, PitchContour, YinConfig};

/// An utterance with all training-time conditioning derived from its audio.
#[derive(Debug, Clone)]
pub struct PreparedUtterance {
    pub id: usize,
    pub speaker_id: u32,
    pub style: StyleClass,
    pub symbols: SymbolSequence,
    pub mel: MelSpectrogram,
    /// Yin contour resampled to the mel frame count.
    pub f0: PitchContour,
    pub speaker: SpeakerEmbedding,
}

/// Mel frames, resampled Yin contour and speaker embedding of one waveform.
pub fn prepare_utterance(wave: &Waveform, encoder: &SpeakerEncoder, cfg: &SynthConfig) -> Result<(MelSpectrogram, PitchContour, SpeakerEmbedding)> {
    let mel = mel_spectrogram(wave, &cfg.mel)?;
    if mel.n_frames() == 0 {
        return Err(Error::Empty("mel"));
    }
    let yin = YinConfig { frame: cfg.mel.frame, ..YinConfig::default() };
    let f0 = extract_pitch(wave, &yin)?.resample_nearest(mel.n_frames());
    let s = encoder.embed_waveform(wave)?;
    Ok((mel, f0, s))
}

pub fn prepare_utterances<'a>(utts: impl IntoIterator<Item = &'a Utterance>, encoder: &SpeakerEncoder, cfg: &SynthConfig) -> Result<Vec<PreparedUtterance>> {
    utts.into_iter()
        .map(|u| {
            let (mel, f0, speaker) = prepare_utterance(&u.waveform, encoder, cfg)?;
            Ok(PreparedUtterance { id: u.id, speaker_id: u.speaker_id, style: u.style, symbols: u.symbols.clone(), mel, f0, speaker })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SynthTrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    /// Weight of the diagonal attention prior added to the reconstruction loss.
    pub guided_attention_weight: f64,
    pub seed: u64,
}

impl Default for SynthTrainConfig {
    fn default() -> Self {
        SynthTrainConfig {
            steps: 2000,
            batch_size: 8,
            adam: AdamConfig { clip_norm: Some(1.0), ..AdamConfig::with_lr(1e-3) },
            guided_attention_weight: 1.0,
            seed: 11,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SynthTrainReport {
    /// Batch-mean reconstruction MSE per step, measured before the update.
    pub losses: Vec<f64>,
    /// Teacher-forced MSE on the validation split after training.
    pub val_loss: f64,
}

impl SynthTrainReport {
    pub fn initial_loss(&self) -> f64 {
        self.losses.first().copied().unwrap_or(f64::NAN)
    }

    /// Mean of the last `n` step losses.
    pub fn final_loss(&self, n: usize) -> f64 {
        let n = n.clamp(1, self.losses.len().max(1));
        let tail = &self.losses[self.losses.len().saturating_sub(n)..];
        tail.iter().sum::<f64>() / tail.len().max(1) as f64
    }
}

/// Loss graph for one utterance: reconstruction MSE plus the weighted
/// attention prior. Returns (total, mse).
pub(crate) fn utterance_loss(g: &mut Graph, b: &Bound, cfg: &SynthConfig, u: &PreparedUtterance, guide_weight: f64, seed: u64) -> Result<(Var, Var)> {
    let net = Net::bind(b, g, cfg)?;
    let z = net.style(g, u.mel.frames())?;
    let mem = net.memory(g, u.symbols.ids(), u.speaker.as_slice(), z)?;
    let f0 = f0_features(&u.f0, cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = net.decode(g, mem, &f0, Feed::Teacher(u.mel.frames()), None, &mut rng)?;
    let target = g.constant(Tensor::from(u.mel.frames().clone()))?;
    let mse = g.mse(d.frames, target)?;
    if guide_weight == 0.0 {
        return Ok((mse, mse));
    }
    let guide = g.constant(guide_matrix(u.mel.n_frames(), u.symbols.len()))?;
    let pen = g.mul(d.alignment, guide)?;
    let pen = g.mean(pen)?;
    let pen = g.scale(pen, guide_weight)?;
    Ok((g.add(mse, pen)?, mse))
}

/// Gradients of the batch-mean loss; returns them with the batch-mean MSE.
pub(crate) fn batch_gradients(
    params: &ParamStore,
    cfg: &SynthConfig,
    batch: &[&PreparedUtterance],
    guide_weight: f64,
    seed: u64,
    trainable: &dyn Fn(&str) -> bool,
) -> Result<(Vec<Tensor>, f64)> {
    let mut grads = params.zeros_like();
    let mut mse_sum = 0.0;
    let inv = 1.0 / batch.len() as f64;
    for (i, u) in batch.iter().enumerate() {
        let mut g = Graph::new();
        let b = params.bind_with(&mut g, trainable)?;
        let (total, mse) = utterance_loss(&mut g, &b, cfg, u, guide_weight, mix_seed(seed, i as u64, u.id as u64))?;
        mse_sum += g.value(mse).item()?;
        let total = g.scale(total, inv)?;
        g.backward(total)?;
        b.accumulate_grads(&g, &mut grads);
    }
    Ok((grads, mse_sum * inv))
}

fn check_prepared(cfg: &SynthConfig, data: &[PreparedUtterance]) -> Result<()> {
    for u in data {
        if let Some(&s) = u.symbols.ids().iter().find(|&&s| s as usize >= cfg.n_symbols) {
            return Err(Error::invalid(format!("utterance {} uses symbol {} outside the model alphabet of {}", u.id, s, cfg.n_symbols)));
        }
        if u.speaker.dim() != cfg.speaker_dim {
            return Err(Error::shape("train", format!("speaker embedding dim {} vs {}", u.speaker.dim(), cfg.speaker_dim)));
        }
        if u.mel.n_mels() != cfg.mel.n_mels {
            return Err(Error::shape("train", format!("{} mel channels vs {}", u.mel.n_mels(), cfg.mel.n_mels)));
        }
        if u.mel.n_frames() > cfg.max_decoder_steps {
            return Err(Error::invalid(format!("utterance {} has {} frames, above the decoder limit", u.id, u.mel.n_frames())));
        }
    }
    Ok(())
}

/// Trains on pre-derived conditioning. Validation loss is computed on `val`
/// (or reported as NaN when it is empty).
pub fn train_prepared(cfg: &SynthConfig, tcfg: &SynthTrainConfig, data: &[PreparedUtterance], val: &[PreparedUtterance]) -> Result<(Synthesizer, SynthTrainReport)> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::Empty("synthesizer training set"));
    }
    if tcfg.batch_size == 0 {
        return Err(Error::config("batch size must be >= 1"));
    }
    check_prepared(cfg, data)?;
    check_prepared(cfg, val)?;
    let mut params = init_params(cfg, tcfg.seed)?;
    // Start the output layer at the per-channel mean log-mel.
    let n_mels = cfg.mel.n_mels;
    let mut mean = alloc::vec![0.0; n_mels];
    let mut count = 0usize;
    for u in data {
        for r in u.mel.frames().iter_rows() {
            for (m, v) in mean.iter_mut().zip(r) {
                *m += v;
            }
            count += 1;
        }
    }
    params.get_mut("dec.out2.b")?.data_mut().copy_from_slice(&mean.iter().map(|m| m / count as f64).collect::<Vec<_>>());

    let mut opt = Adam::new(tcfg.adam, &params)?;
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(tcfg.seed, 1, 0));
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut cursor = order.len();
    let mut losses = Vec::with_capacity(tcfg.steps);
    for step in 0..tcfg.steps {
        let mut batch = Vec::with_capacity(tcfg.batch_size);
        while batch.len() < tcfg.batch_size.min(data.len()) {
            if cursor == order.len() {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            batch.push(&data[order[cursor]]);
            cursor += 1;
        }
        let (grads, mse) = batch_gradients(&params, cfg, &batch, tcfg.guided_attention_weight, mix_seed(tcfg.seed, 2, step as u64), &|_| true)?;
        if !mse.is_finite() {
            return Err(Error::Divergence(format!("synthesizer loss not finite at step {}", step)));
        }
        losses.push(mse);
        opt.step(&mut params, &grads, None)?;
    }
    let model = Synthesizer { cfg: cfg.clone(), params };
    let val_loss = if val.is_empty() { f64::NAN } else { validation_loss(&model, val, tcfg.seed)? };
    Ok((model, SynthTrainReport { losses, val_loss }))
}

/// Derives conditioning with the frozen speaker encoder and trains on the
/// corpus's synthesizer split.
pub fn train(corpus: &Corpus, encoder: &SpeakerEncoder, cfg: &SynthConfig, tcfg: &SynthTrainConfig) -> Result<(Synthesizer, SynthTrainReport)> {
    if encoder.config().embedding_dim != cfg.speaker_dim {
        return Err(Error::config(format!("speaker encoder emits {} dims, synthesizer expects {}", encoder.config().embedding_dim, cfg.speaker_dim)));
    }
    if encoder.config().sample_rate_hz != corpus.spec.sample_rate_hz || cfg.sample_rate_hz != corpus.spec.sample_rate_hz {
        return Err(Error::config("sample rates of corpus, speaker encoder and synthesizer differ"));
    }
    let data = prepare_utterances(corpus.synth_train(), encoder, cfg)?;
    let val = prepare_utterances(corpus.synth_val(), encoder, cfg)?;
    train_prepared(cfg, tcfg, &data, &val)
}

/// Largest relative error between the analytic gradient of the mean training
/// loss over `batch` and central differences with step `eps`. Parameters are
/// first shifted by uniform noise in `[-jitter, jitter]`, since zero biases at
/// initialization sit on ReLU kinks where finite differences are undefined.
pub fn loss_gradient_error(model: &Synthesizer, batch: &[PreparedUtterance], guide_weight: f64, jitter: f64, seed: u64, eps: f64) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::Empty("gradient check batch"));
    }
    check_prepared(&model.cfg, batch)?;
    let mut params = model.params.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    if jitter > 0.0 {
        for t in params.tensors_mut() {
            for v in t.data_mut() {
                *v += rng.random_range(-jitter..jitter);
            }
        }
    }
    let inv = 1.0 / batch.len() as f64;
    let f = |g: &mut Graph, vars: &[Var]| -> Result<Var> {
        let bound = params.bind_vars(vars)?;
        let mut total: Option<Var> = None;
        for (i, u) in batch.iter().enumerate() {
            let (l, _) = utterance_loss(g, &bound, &model.cfg, u, guide_weight, mix_seed(seed, i as u64, 1))?;
            total = Some(match total {
                Some(t) => g.add(t, l)?,
                None => l,
            });
        }
        g.scale(total.expect("non-empty batch"), inv)
    };
    crate::autodiff::gradcheck::check_gradients(f, params.tensors(), eps)
}

/// Mean teacher-forced reconstruction MSE.
pub fn validation_loss(model: &Synthesizer, data: &[PreparedUtterance], seed: u64) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::Empty("validation set"));
    }
    let mut sum = 0.0;
    for u in data {
        let mut g = Graph::new();
        let b = model.params.bind_with(&mut g, |_| false)?;
        let (_, mse) = utterance_loss(&mut g, &b, &model.cfg, u, 0.0, mix_seed(seed, 3, u.id as u64))?;
        sum += g.value(mse).item()?;
    }
    Ok(sum / data.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum AdaptMode {
    /// Fine-tune every parameter.
    Whole,
    /// Fine-tune decoder-side parameters only.
    Decoder,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AdaptConfig {
    pub mode: AdaptMode,
    pub iterations: usize,
    pub adam: AdamConfig,
    pub guided_attention_weight: f64,
    pub seed: u64,
}

impl Default for AdaptConfig {
    fn default() -> Self {
        AdaptConfig {
            mode: AdaptMode::Decoder,
            iterations: 150,
            adam: AdamConfig { clip_norm: Some(1.0), ..AdamConfig::with_lr(1e-4) },
            guided_attention_weight: 1.0,
            seed: 17,
        }
    }
}

/// Maximum number of target-speaker samples accepted by [`adapt`].
pub const MAX_ADAPT_SAMPLES: usize = 20;

/// Fine-tunes a copy of `model` on a few target-speaker samples, using the
/// full sample set as the batch at every iteration.
pub fn adapt(model: &Synthesizer, samples: &[PreparedUtterance], cfg: &AdaptConfig) -> Result<Synthesizer> {
    if samples.is_empty() {
        return Err(Error::Empty("adaptation samples"));
    }
    if samples.len() > MAX_ADAPT_SAMPLES {
        return Err(Error::invalid(format!("{} adaptation samples, at most {} supported", samples.len(), MAX_ADAPT_SAMPLES)));
    }
    check_prepared(&model.cfg, samples)?;
    let mut out = model.clone();
    let names = out.params.names().to_vec();
    let mask: Vec<bool> = names
        .iter()
        .map(|n| param_group(n).map(|grp| cfg.mode == AdaptMode::Whole || grp == ParamGroup::Decoder))
        .collect::<Result<_>>()?;
    let trainable = |name: &str| cfg.mode == AdaptMode::Whole || param_group(name).map(|grp| grp == ParamGroup::Decoder).unwrap_or(false);
    let batch: Vec<&PreparedUtterance> = samples.iter().collect();
    let mut opt = Adam::new(cfg.adam, &out.params)?;
    for it in 0..cfg.iterations {
        let (grads, mse) = batch_gradients(&out.params, &out.cfg, &batch, cfg.guided_attention_weight, mix_seed(cfg.seed, 4, it as u64), &trainable)?;
        if !mse.is_finite() {
            return Err(Error::Divergence(format!("adaptation loss not finite at iteration {}", it)));
        }
        opt.step(&mut out.params, &grads, Some(&mask))?;
    }
    Ok(out)
}
