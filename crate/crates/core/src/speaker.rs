//! Speaker encoder: stacked GRU over 40-channel log-mel segments, trained
//! with the generalized end-to-end (softmax) verification loss.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
#[allow(unused_imports)] // shadowed by inherent methods when std is linked
use num_traits::Float;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{dot, norm, Adam, AdamConfig, Bound, Checkpoint, Graph, ParamStore, Tensor, Var};
use crate::corpus::{Corpus, Split};
use crate::dsp::{mel_spectrogram, MelConfig, MelSpectrogram, Waveform};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::metrics::{eer, ScoreSet};
use crate::nn::{Gru, Linear};

pub const CHECKPOINT_KIND: &str = "speaker-encoder/gru-v1";

/// Divisor applied to mean-removed log-mel input.
const INPUT_SCALE: f64 = 4.0;

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SpeakerEncoderConfig {
    pub n_recurrent_layers: usize,
    pub cells_per_layer: usize,
    pub embedding_dim: usize,
    pub mel: MelConfig,
    pub sample_rate_hz: u32,
    pub segment_ms: f64,
    pub overlap_ms: f64,
}

impl Default for SpeakerEncoderConfig {
    fn default() -> Self {
        SpeakerEncoderConfig {
            n_recurrent_layers: 3,
            cells_per_layer: 32,
            embedding_dim: 32,
            mel: MelConfig::speaker(),
            sample_rate_hz: 22050,
            segment_ms: 1600.0,
            overlap_ms: 1000.0,
        }
    }
}

impl SpeakerEncoderConfig {
    /// Full-size dimensions (256 cells, 256-dim embedding).
    pub fn paper() -> Self {
        SpeakerEncoderConfig { cells_per_layer: 256, embedding_dim: 256, ..Default::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_recurrent_layers == 0 || self.cells_per_layer == 0 || self.embedding_dim == 0 {
            return Err(Error::config("speaker encoder dims must be at least 1"));
        }
        if !(self.overlap_ms >= 0.0 && self.overlap_ms < self.segment_ms) {
            return Err(Error::config("segment overlap must be in [0, segment length)"));
        }
        self.mel.validate(self.sample_rate_hz)
    }

    fn frames_for(&self, ms: f64) -> usize {
        ((ms / 1000.0 * self.sample_rate_hz as f64 / self.mel.frame.hop_length as f64).round() as usize).max(1)
    }

    pub fn segment_frames(&self) -> usize {
        self.frames_for(self.segment_ms)
    }

    pub fn step_frames(&self) -> usize {
        self.frames_for(self.segment_ms - self.overlap_ms)
    }
}

/// Unit-norm speaker vector.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SpeakerEmbedding(Vec<f64>);

impl SpeakerEmbedding {
    /// Accepts a vector whose L2 norm is 1 within 1e-6.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() || values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("embedding must be nonempty and finite"));
        }
        let n = norm(&values);
        if (n - 1.0).abs() > 1e-6 {
            return Err(Error::invalid(format!("embedding norm {} is not 1", n)));
        }
        Ok(SpeakerEmbedding(values))
    }

    /// Normalizes an arbitrary nonzero vector.
    pub fn normalized(values: Vec<f64>) -> Result<Self> {
        let n = norm(&values);
        if !(n > 0.0) || !n.is_finite() {
            return Err(Error::invalid("cannot normalize a zero or non-finite vector"));
        }
        Ok(SpeakerEmbedding(values.into_iter().map(|v| v / n).collect()))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn cosine(&self, other: &SpeakerEmbedding) -> f64 {
        dot(&self.0, &other.0)
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }
}

/// Component-wise mean followed by L2 normalization.
pub fn aggregate_embeddings(embeddings: &[SpeakerEmbedding]) -> Result<SpeakerEmbedding> {
    let first = embeddings.first().ok_or(Error::Empty("embedding list"))?;
    let d = first.dim();
    if embeddings.iter().any(|e| e.dim() != d) {
        return Err(Error::shape("aggregate_embeddings", "embeddings differ in dimension"));
    }
    let mut mean = vec![0.0; d];
    for e in embeddings {
        for (m, v) in mean.iter_mut().zip(e.as_slice()) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= embeddings.len() as f64);
    if norm(&mean) < 1e-12 {
        return Err(Error::invalid("embeddings cancel out; mean is zero"));
    }
    SpeakerEmbedding::normalized(mean)
}

/// Row-centroids of an (N·M) × D speaker-major batch that leave out each
/// row's own utterance: row (j, i) gets the mean of speaker j's other M−1
/// rows. Built from a constant selection matrix with a zero on the diagonal,
/// so no row contributes to its own centroid.
pub fn exclusive_centroids(g: &mut Graph, emb: Var, n: usize, m: usize) -> Result<Var> {
    if m < 2 {
        return Err(Error::invalid("exclusive centroids need at least 2 utterances per speaker"));
    }
    let nm = n * m;
    let mut sel = vec![0.0; nm * nm];
    for j in 0..n {
        for i in 0..m {
            for l in 0..m {
                if l != i {
                    sel[(j * m + i) * nm + j * m + l] = 1.0 / (m - 1) as f64;
                }
            }
        }
    }
    let sel = g.constant(Tensor::matrix(nm, nm, sel)?)?;
    g.matmul(sel, emb)
}

/// Softmax GE2E loss summed over the batch. `emb` is (N·M) × D, speaker-major;
/// `w` and `b` are one-element tensors.
pub fn ge2e_loss(g: &mut Graph, emb: Var, n: usize, m: usize, w: Var, b: Var) -> Result<Var> {
    if n < 2 || m < 2 {
        return Err(Error::invalid(format!("GE2E needs N >= 2 and M >= 2, got {}x{}", n, m)));
    }
    let (rows, _) = (g.value(emb).rows(), g.value(emb).cols());
    if rows != n * m {
        return Err(Error::shape("ge2e_loss", format!("{} rows for {} speakers x {} utterances", rows, n, m)));
    }
    let nm = n * m;
    let mut avg = vec![0.0; n * nm];
    let mut mask = vec![0.0; nm * n];
    for j in 0..n {
        for i in 0..m {
            avg[j * nm + j * m + i] = 1.0 / m as f64;
            mask[(j * m + i) * n + j] = 1.0;
        }
    }
    let avg = g.constant(Tensor::matrix(n, nm, avg)?)?;
    let centroids = g.matmul(avg, emb)?;
    let cn = g.l2_normalize_rows(centroids)?;
    let en = g.l2_normalize_rows(emb)?;
    let cnt = g.transpose(cn)?;
    let cos_all = g.matmul(en, cnt)?;
    let excl = exclusive_centroids(g, emb, n, m)?;
    let own = g.cosine_rows(emb, excl)?;
    let ones = g.constant(Tensor::full(&[1, n], 1.0))?;
    let own_b = g.matmul(own, ones)?;
    let inv_mask: Vec<f64> = mask.iter().map(|v| 1.0 - v).collect();
    let mask = g.constant(Tensor::matrix(nm, n, mask)?)?;
    let inv_mask = g.constant(Tensor::matrix(nm, n, inv_mask)?)?;
    let others = g.mul(cos_all, inv_mask)?;
    let own_m = g.mul(own_b, mask)?;
    let cos = g.add(others, own_m)?;
    let s = g.mul_scalar(cos, w)?;
    let s = g.add_scalar(s, b)?;
    let lp = g.log_softmax_rows(s)?;
    let picked = g.mul(lp, mask)?;
    let total = g.sum(picked)?;
    g.scale(total, -1.0)
}

/// Trained or freshly initialized speaker encoder.
#[derive(Debug, Clone, PartialEq)]
pub struct SpeakerEncoder {
    cfg: SpeakerEncoderConfig,
    params: ParamStore,
}

impl SpeakerEncoder {
    pub fn new(cfg: SpeakerEncoderConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let mut input = cfg.mel.n_mels;
        for l in 0..cfg.n_recurrent_layers {
            Gru::init(&mut params, &format!("enc.gru{l}"), input, cfg.cells_per_layer, &mut rng)?;
            input = cfg.cells_per_layer;
        }
        Linear::init(&mut params, "enc.proj", cfg.cells_per_layer, cfg.embedding_dim, &mut rng)?;
        params.insert("ge2e.w", Tensor::scalar(10.0))?;
        params.insert("ge2e.b", Tensor::scalar(-5.0))?;
        Ok(SpeakerEncoder { cfg, params })
    }

    /// Rebuilds an encoder from stored parameters, checking their layout.
    pub fn from_params(cfg: SpeakerEncoderConfig, params: ParamStore) -> Result<Self> {
        let fresh = SpeakerEncoder::new(cfg, 0)?;
        fresh.params.check_layout(&params)?;
        Ok(SpeakerEncoder { cfg: fresh.cfg, params })
    }

    pub fn from_checkpoint(cfg: SpeakerEncoderConfig, ck: Checkpoint) -> Result<Self> {
        if ck.kind != CHECKPOINT_KIND {
            return Err(Error::Format(format!("expected a {} checkpoint, found {}", CHECKPOINT_KIND, ck.kind)));
        }
        SpeakerEncoder::from_params(cfg, ck.params)
    }

    pub fn to_checkpoint(&self, meta: String) -> Checkpoint {
        Checkpoint { kind: CHECKPOINT_KIND.into(), meta, params: self.params.clone() }
    }

    pub fn config(&self) -> &SpeakerEncoderConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    /// Mean-removed, scaled, left zero-padded network input for one segment.
    fn prepare_segment(&self, mel: &Matrix, start: usize, len: usize) -> Vec<f64> {
        let seg = self.cfg.segment_frames();
        let c = mel.cols();
        let rows = &mel.as_slice()[start * c..(start + len) * c];
        let mean = rows.iter().sum::<f64>() / rows.len() as f64;
        let mut out = vec![0.0; (seg - len) * c];
        out.extend(rows.iter().map(|v| (v - mean) / INPUT_SCALE));
        out
    }

    /// Segment start frames: every step while a full segment fits, plus one
    /// segment ending at the last frame if the tail is not yet covered.
    pub fn segment_starts(&self, frames: usize) -> Vec<usize> {
        let (seg, step) = (self.cfg.segment_frames(), self.cfg.step_frames());
        if frames <= seg {
            return vec![0];
        }
        let mut starts: Vec<usize> = (0..).map(|k| k * step).take_while(|s| s + seg <= frames).collect();
        if starts.last().is_none_or(|&s| s + seg < frames) {
            starts.push(frames - seg);
        }
        starts
    }

    fn segment_len(&self, frames: usize) -> usize {
        frames.min(self.cfg.segment_frames())
    }

    /// Encodes prepared segments (each `segment_frames × n_mels`, row-major)
    /// into an (B × D) matrix of unit rows.
    fn encode(&self, g: &mut Graph, b: &Bound, segments: &[Vec<f64>]) -> Result<Var> {
        let (seg, c) = (self.cfg.segment_frames(), self.cfg.mel.n_mels);
        let batch = segments.len();
        // Step-major layout: rows t·B..(t+1)·B hold frame t of every segment.
        let mut data = vec![0.0; seg * batch * c];
        for (bi, s) in segments.iter().enumerate() {
            for t in 0..seg {
                data[(t * batch + bi) * c..(t * batch + bi + 1) * c].copy_from_slice(&s[t * c..(t + 1) * c]);
            }
        }
        let mut x = g.constant(Tensor::matrix(seg * batch, c, data)?)?;
        let mut last = x;
        for l in 0..self.cfg.n_recurrent_layers {
            let gru = Gru::bind(b, g, &format!("enc.gru{l}"))?;
            let hs = gru.run(g, x, seg, batch)?;
            last = *hs.last().expect("segment has frames");
            if l + 1 < self.cfg.n_recurrent_layers {
                x = g.concat_rows(&hs)?;
            }
        }
        let e = Linear::bind(b, "enc.proj")?.forward(g, last)?;
        g.l2_normalize_rows(e)
    }

    fn check_mel(&self, mel: &MelSpectrogram) -> Result<()> {
        if mel.n_frames() == 0 {
            return Err(Error::Empty("mel spectrogram"));
        }
        if mel.n_mels() != self.cfg.mel.n_mels {
            return Err(Error::shape("speaker encoder", format!("expected {} mel channels, got {}", self.cfg.mel.n_mels, mel.n_mels())));
        }
        Ok(())
    }

    /// Per-segment embeddings of one utterance.
    pub fn segment_embeddings(&self, mel: &MelSpectrogram) -> Result<Vec<SpeakerEmbedding>> {
        self.check_mel(mel)?;
        let frames = mel.frames();
        let len = self.segment_len(frames.rows());
        let segs: Vec<Vec<f64>> = self.segment_starts(frames.rows()).into_iter().map(|s| self.prepare_segment(frames, s, len)).collect();
        let mut g = Graph::new();
        let b = self.params.bind_with(&mut g, |_| false)?;
        let e = self.encode(&mut g, &b, &segs)?;
        let out = g.value(e);
        (0..out.rows()).map(|r| SpeakerEmbedding::normalized(out.row_slice(r).to_vec())).collect()
    }

    /// Utterance embedding: mean of the unit segment embeddings, renormalized.
    pub fn embed_mel(&self, mel: &MelSpectrogram) -> Result<SpeakerEmbedding> {
        aggregate_embeddings(&self.segment_embeddings(mel)?)
    }

    pub fn embed_waveform(&self, wave: &Waveform) -> Result<SpeakerEmbedding> {
        self.embed_mel(&mel_spectrogram(wave, &self.cfg.mel)?)
    }

    /// Scores every test utterance against every enrolled speaker. Enrollment
    /// embeddings are aggregated per speaker.
    pub fn verification_scores(&self, enroll: &[(u32, Vec<MelSpectrogram>)], test: &[(u32, MelSpectrogram)]) -> Result<ScoreSet> {
        let mut centroids = Vec::with_capacity(enroll.len());
        for (id, mels) in enroll {
            let embs = mels.iter().map(|m| self.embed_mel(m)).collect::<Result<Vec<_>>>()?;
            centroids.push((*id, aggregate_embeddings(&embs)?));
        }
        let mut scores = ScoreSet::default();
        for (id, mel) in test {
            let e = self.embed_mel(mel)?;
            for (cid, c) in &centroids {
                let s = e.cosine(c);
                if cid == id {
                    scores.genuine_scores.push(s);
                } else {
                    scores.impostor_scores.push(s);
                }
            }
        }
        Ok(scores)
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SpeakerTrainConfig {
    pub steps: usize,
    /// Utterance crops per speaker per batch (M).
    pub utterances_per_speaker: usize,
    pub adam: AdamConfig,
    pub seed: u64,
    /// Enrollment utterances per speaker for the EER protocol.
    pub enroll: usize,
    /// Test utterances per speaker for the EER protocol.
    pub test: usize,
}

impl Default for SpeakerTrainConfig {
    fn default() -> Self {
        SpeakerTrainConfig {
            steps: 300,
            utterances_per_speaker: 4,
            adam: AdamConfig { lr: 2e-3, clip_norm: Some(5.0), ..AdamConfig::default() },
            seed: 1,
            enroll: 3,
            test: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SpeakerTrainReport {
    pub losses: Vec<f64>,
    pub eer_untrained: f64,
    pub eer_trained: f64,
}

/// Enrollment (first train utterances) and test (validation utterances)
/// sets for every speaker, as 40-channel mels.
pub fn verification_split(
    corpus: &Corpus,
    cfg: &SpeakerEncoderConfig,
    enroll: usize,
    test: usize,
) -> Result<(Vec<(u32, Vec<MelSpectrogram>)>, Vec<(u32, MelSpectrogram)>)> {
    let mut e = Vec::new();
    let mut t = Vec::new();
    for id in corpus.speaker_ids() {
        let mels = corpus
            .utterances_of(id)
            .filter(|u| u.split == Split::Train)
            .take(enroll)
            .map(|u| mel_spectrogram(&u.waveform, &cfg.mel))
            .collect::<Result<Vec<_>>>()?;
        if mels.is_empty() {
            return Err(Error::invalid(format!("speaker {} has no enrollment utterances", id)));
        }
        e.push((id, mels));
        for u in corpus.utterances_of(id).filter(|u| u.split == Split::Val).take(test) {
            t.push((id, mel_spectrogram(&u.waveform, &cfg.mel)?));
        }
    }
    if t.is_empty() {
        return Err(Error::invalid("no validation utterances for the verification test"));
    }
    Ok((e, t))
}

/// Trains on random crops of the train split of every speaker. Each step
/// draws M utterances per speaker (with replacement when a speaker has fewer).
pub fn train_speaker_encoder(corpus: &Corpus, cfg: &SpeakerEncoderConfig, train: &SpeakerTrainConfig) -> Result<(SpeakerEncoder, SpeakerTrainReport)> {
    let mut enc = SpeakerEncoder::new(cfg.clone(), train.seed)?;
    let m = train.utterances_per_speaker;
    let mut pools: Vec<Vec<Matrix>> = Vec::new();
    for id in corpus.speaker_ids() {
        let mels = corpus
            .utterances_of(id)
            .filter(|u| u.split == Split::Train)
            .map(|u| mel_spectrogram(&u.waveform, &cfg.mel).map(|m| m.into_frames()))
            .collect::<Result<Vec<_>>>()?;
        if mels.len() >= 2 {
            pools.push(mels);
        }
    }
    if pools.len() < 2 || m < 2 {
        return Err(Error::invalid("speaker training needs at least 2 speakers with 2 utterances each and M >= 2"));
    }
    let (enroll, test) = verification_split(corpus, cfg, train.enroll, train.test)?;
    let eer_untrained = eer(&enc.verification_scores(&enroll, &test)?)?;
    let mut rng = ChaCha8Rng::seed_from_u64(train.seed ^ 0x5eed);
    let mut opt = Adam::new(train.adam, &enc.params)?;
    let mut losses = Vec::with_capacity(train.steps);
    for step in 0..train.steps {
        let mut segments = Vec::with_capacity(pools.len() * m);
        for pool in &pools {
            let mut order: Vec<usize> = (0..pool.len()).collect();
            order.shuffle(&mut rng);
            for k in 0..m {
                let mel = &pool[order[k % order.len()]];
                // Random crop covering 60-100% of what fits in one segment.
                let full = enc.segment_len(mel.rows());
                let len = rng.random_range((full * 3 / 5).max(1)..=full);
                let start = rng.random_range(0..=mel.rows() - len);
                segments.push(enc.prepare_segment(mel, start, len));
            }
        }
        let mut g = Graph::new();
        let b = enc.params.bind(&mut g)?;
        let e = enc.encode(&mut g, &b, &segments)?;
        let loss = ge2e_loss(&mut g, e, pools.len(), m, b.var("ge2e.w")?, b.var("ge2e.b")?)?;
        let lv = g.value(loss).item()?;
        if !lv.is_finite() {
            return Err(Error::Divergence(format!("speaker loss not finite at step {}", step)));
        }
        losses.push(lv);
        g.backward(loss)?;
        let mut grads = enc.params.zeros_like();
        b.accumulate_grads(&g, &mut grads);
        opt.step(&mut enc.params, &grads, None)?;
        let w = enc.params.get_mut("ge2e.w")?;
        w.data_mut()[0] = w.data()[0].max(1e-2);
    }
    let eer_trained = eer(&enc.verification_scores(&enroll, &test)?)?;
    Ok((enc, SpeakerTrainReport { losses, eer_untrained, eer_trained }))
}
