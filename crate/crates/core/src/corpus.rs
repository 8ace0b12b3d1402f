//! Procedurally generated multi-speaker corpus with known ground truth.
//!
//! Speech is rendered as a harmonic source following a piecewise-linear f0
//! plan, shaped by a per-speaker formant envelope, with low-level noise on
//! unvoiced spans. Every utterance keeps its plan, so pitch, voicing and
//! symbol timing are known exactly.

use alloc::vec;
use alloc::vec::Vec;
#[allow(unused_imports)] // shadowed by inherent methods when std is linked
use num_traits::Float;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::dsp::{FrameConfig, Waveform};
use crate::error::{Error, Result};
use crate::yin::PitchContour;

/// Symbol 0 is silence; 1..=9 are voiced pseudo-phones; 10..=12 are unvoiced.
pub const ALPHABET_SIZE: usize = 13;
pub const SILENCE: u8 = 0;
const FIRST_UNVOICED: u8 = 10;

/// Formant multipliers (F1, F2, F3) applied to a speaker's formant centers.
const FORMANT_FACTORS: [[f64; 3]; ALPHABET_SIZE] = [
    [1.00, 1.00, 1.00],
    [1.35, 1.10, 1.00],
    [0.60, 1.40, 1.08],
    [0.80, 0.70, 0.95],
    [1.20, 0.85, 1.05],
    [0.70, 1.25, 0.92],
    [1.05, 0.60, 0.98],
    [0.90, 1.00, 1.10],
    [1.30, 0.75, 0.90],
    [0.65, 1.30, 1.02],
    [1.00, 1.00, 1.30],
    [1.00, 1.00, 0.85],
    [1.00, 1.00, 1.55],
];
const FORMANT_BANDWIDTHS_HZ: [f64; 3] = [90.0, 110.0, 150.0];
const FORMANT_GAINS: [f64; 3] = [1.0, 0.7, 0.45];
const VOICED_RMS: f64 = 0.1;
/// Unvoiced noise level relative to the voiced level.
const UNVOICED_DB: f64 = -30.0;
const BLOCK: usize = 32;
/// Largest expressive log-f0 slope, per second.
const MAX_GLIDE_PER_S: f64 = 0.6;

pub fn is_voiced_symbol(id: u8) -> bool {
    id != SILENCE && id < FIRST_UNVOICED
}

/// Nonempty sequence of symbol ids from the corpus alphabet.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(try_from = "Vec<u8>", into = "Vec<u8>"))]
pub struct SymbolSequence(Vec<u8>);

impl SymbolSequence {
    pub fn new(ids: Vec<u8>) -> Result<Self> {
        if ids.is_empty() {
            return Err(Error::Empty("symbol sequence"));
        }
        if let Some(bad) = ids.iter().find(|&&s| s as usize >= ALPHABET_SIZE) {
            return Err(Error::invalid(alloc::format!("symbol {} outside alphabet of {}", bad, ALPHABET_SIZE)));
        }
        Ok(SymbolSequence(ids))
    }

    pub fn ids(&self) -> &[u8] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl TryFrom<Vec<u8>> for SymbolSequence {
    type Error = Error;
    fn try_from(v: Vec<u8>) -> Result<Self> {
        SymbolSequence::new(v)
    }
}

impl From<SymbolSequence> for Vec<u8> {
    fn from(s: SymbolSequence) -> Vec<u8> {
        s.0
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SpeakerParams {
    pub speaker_id: u32,
    pub formant_centers_hz: Vec<f64>,
    pub spectral_tilt_db_per_octave: f64,
    pub base_pitch_hz: f64,
}

impl SpeakerParams {
    pub fn validate(&self) -> Result<()> {
        let f = &self.formant_centers_hz;
        if !(2..=4).contains(&f.len()) {
            return Err(Error::invalid("speaker needs 2 to 4 formants"));
        }
        if f.windows(2).any(|w| w[0] >= w[1]) || f[0] <= 0.0 {
            return Err(Error::invalid("formant centers must be positive and strictly increasing"));
        }
        if !(80.0..=320.0).contains(&self.base_pitch_hz) {
            return Err(Error::invalid(alloc::format!("base pitch {} outside [80, 320]", self.base_pitch_hz)));
        }
        Ok(())
    }

    fn symbol_formants(&self, symbol: u8) -> [f64; 4] {
        let mut out = [0.0; 4];
        let factors = FORMANT_FACTORS[symbol as usize];
        for (k, f) in self.formant_centers_hz.iter().enumerate() {
            out[k] = f * factors.get(k).copied().unwrap_or(1.0);
        }
        out
    }

    fn envelope(&self, symbol: u8, freq: f64) -> f64 {
        let formants = self.symbol_formants(symbol);
        let mut res = 0.02;
        for k in 0..self.formant_centers_hz.len() {
            let bw = FORMANT_BANDWIDTHS_HZ.get(k).copied().unwrap_or(180.0);
            let gain = FORMANT_GAINS.get(k).copied().unwrap_or(0.3);
            let x = (freq - formants[k]) / bw;
            res += gain / (1.0 + x * x);
        }
        let octaves = (freq.max(20.0) / 100.0).log2();
        res * 10.0.powf(self.spectral_tilt_db_per_octave * octaves / 20.0)
    }
}

/// Per-symbol timing and f0 targets. f0 is linear from `f0_start_hz` to
/// `f0_end_hz` within each voiced symbol and zero on unvoiced ones.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PlanSegment {
    pub symbol: u8,
    pub duration_ms: f64,
    pub f0_start_hz: f64,
    pub f0_end_hz: f64,
    pub voiced: bool,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct UtterancePlan {
    segments: Vec<PlanSegment>,
}

impl UtterancePlan {
    pub fn new(segments: Vec<PlanSegment>) -> Result<Self> {
        if segments.is_empty() {
            return Err(Error::Empty("utterance plan"));
        }
        for (i, s) in segments.iter().enumerate() {
            if s.symbol as usize >= ALPHABET_SIZE {
                return Err(Error::invalid(alloc::format!("segment {}: symbol {} outside alphabet", i, s.symbol)));
            }
            if !(s.duration_ms > 0.0 && s.duration_ms.is_finite()) {
                return Err(Error::invalid(alloc::format!("segment {}: duration must be positive", i)));
            }
            let f0_ok = if s.voiced {
                s.f0_start_hz > 0.0 && s.f0_end_hz > 0.0 && s.f0_start_hz.is_finite() && s.f0_end_hz.is_finite()
            } else {
                s.f0_start_hz == 0.0 && s.f0_end_hz == 0.0
            };
            if !f0_ok {
                return Err(Error::invalid(alloc::format!("segment {}: f0 must be positive exactly when voiced", i)));
            }
        }
        Ok(UtterancePlan { segments })
    }

    pub fn segments(&self) -> &[PlanSegment] {
        &self.segments
    }

    pub fn symbols(&self) -> SymbolSequence {
        SymbolSequence(self.segments.iter().map(|s| s.symbol).collect())
    }

    pub fn durations_ms(&self) -> Vec<f64> {
        self.segments.iter().map(|s| s.duration_ms).collect()
    }

    pub fn total_ms(&self) -> f64 {
        self.segments.iter().map(|s| s.duration_ms).sum()
    }

    pub fn total_samples(&self, sample_rate_hz: u32) -> usize {
        (self.total_ms() * sample_rate_hz as f64 / 1000.0).round() as usize
    }

    /// Sample index at which each segment starts, plus the end.
    pub fn boundaries(&self, sample_rate_hz: u32) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.segments.len() + 1);
        let mut acc = 0.0;
        out.push(0);
        for s in &self.segments {
            acc += s.duration_ms;
            out.push((acc * sample_rate_hz as f64 / 1000.0).round() as usize);
        }
        out
    }

    /// Segment index and planned f0 (0 when unvoiced) at time `t_ms`.
    pub fn f0_at_ms(&self, t_ms: f64) -> (usize, f64) {
        let mut start = 0.0;
        for (i, s) in self.segments.iter().enumerate() {
            let end = start + s.duration_ms;
            if t_ms < end || i + 1 == self.segments.len() {
                if !s.voiced {
                    return (i, 0.0);
                }
                let frac = ((t_ms - start) / s.duration_ms).clamp(0.0, 1.0);
                return (i, s.f0_start_hz + frac * (s.f0_end_hz - s.f0_start_hz));
            }
            start = end;
        }
        (0, 0.0)
    }

    /// Ground-truth contour sampled at analysis-frame centers.
    pub fn frame_contour(&self, frame: &FrameConfig, sample_rate_hz: u32, n_frames: usize) -> PitchContour {
        let f0 = (0..n_frames)
            .map(|m| {
                let center = (m * frame.hop_length + frame.window_length / 2) as f64;
                self.f0_at_ms(center * 1000.0 / sample_rate_hz as f64).1
            })
            .collect();
        PitchContour::from_f0(f0, frame.hop_length, sample_rate_hz).expect("plan f0 is nonnegative")
    }
}

/// Renders one utterance. Voiced spans are a sum of harmonics of the planned
/// f0 weighted by the speaker's formant envelope; unvoiced spans are noise
/// 30 dB below the voiced level. `seed` drives the noise only.
pub fn render_utterance(speaker: &SpeakerParams, plan: &UtterancePlan, sample_rate_hz: u32, seed: u64) -> Result<Waveform> {
    speaker.validate()?;
    let nyquist = sample_rate_hz as f64 / 2.0;
    for s in plan.segments() {
        let formants = speaker.symbol_formants(s.symbol);
        if formants.iter().any(|&f| f >= nyquist) {
            return Err(Error::invalid(alloc::format!(
                "formant above nyquist {} Hz for symbol {}",
                nyquist,
                s.symbol
            )));
        }
    }
    let sr = sample_rate_hz as f64;
    let bounds = plan.boundaries(sample_rate_hz);
    let total = *bounds.last().unwrap_or(&0);
    let mut out = vec![0.0; total];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let noise_rms = VOICED_RMS * 10.0.powf(UNVOICED_DB / 20.0);
    let max_harmonic_hz = nyquist.min(6000.0);
    let mut phase = 0.0f64;
    let mut amps: Vec<f64> = Vec::new();
    for (seg_idx, seg) in plan.segments().iter().enumerate() {
        let (a, b) = (bounds[seg_idx], bounds[seg_idx + 1]);
        if b <= a {
            continue;
        }
        if seg.voiced {
            let len = (b - a) as f64;
            let mut n = a;
            while n < b {
                let end = (n + BLOCK).min(b);
                let mid = ((n + end) as f64 * 0.5 - a as f64) / len;
                let f_mid = seg.f0_start_hz + mid.clamp(0.0, 1.0) * (seg.f0_end_hz - seg.f0_start_hz);
                let n_harm = (max_harmonic_hz / f_mid).floor().max(1.0) as usize;
                amps.clear();
                amps.extend((1..=n_harm).map(|h| speaker.envelope(seg.symbol, h as f64 * f_mid)));
                let power: f64 = amps.iter().map(|x| x * x).sum::<f64>() * 0.5;
                let norm = VOICED_RMS / power.sqrt().max(1e-12);
                amps.iter_mut().for_each(|x| *x *= norm);
                for (i, slot) in out[n..end].iter_mut().enumerate() {
                    let frac = ((n + i - a) as f64 / len).clamp(0.0, 1.0);
                    let f0 = seg.f0_start_hz + frac * (seg.f0_end_hz - seg.f0_start_hz);
                    phase += 2.0 * core::f64::consts::PI * f0 / sr;
                    if phase > 2.0 * core::f64::consts::PI {
                        phase -= 2.0 * core::f64::consts::PI;
                    }
                    *slot = amps.iter().enumerate().map(|(h, amp)| amp * ((h + 1) as f64 * phase).sin()).sum();
                }
                n = end;
            }
        } else {
            // Fricatives get a two-pole resonance near a scaled F3; silence is white.
            let resonance = if seg.symbol == SILENCE {
                None
            } else {
                let fc = speaker.symbol_formants(seg.symbol)[speaker.formant_centers_hz.len() - 1].min(nyquist * 0.9);
                let r = 0.9f64;
                Some((2.0 * r * (2.0 * core::f64::consts::PI * fc / sr).cos(), -r * r))
            };
            let mut raw: Vec<f64> = (a..b).map(|_| normal.sample(&mut rng)).collect();
            if let Some((c1, c2)) = resonance {
                let (mut y1, mut y2) = (0.0, 0.0);
                for x in raw.iter_mut() {
                    let y = *x + c1 * y1 + c2 * y2;
                    y2 = y1;
                    y1 = y;
                    *x = y;
                }
            }
            let rms = (raw.iter().map(|x| x * x).sum::<f64>() / raw.len() as f64).sqrt().max(1e-12);
            for (slot, x) in out[a..b].iter_mut().zip(raw) {
                *slot = x * noise_rms / rms;
            }
        }
    }
    let peak = out.iter().fold(0.0f64, |p, v| p.max(v.abs()));
    if peak > 0.99 {
        out.iter_mut().for_each(|v| *v *= 0.99 / peak);
    }
    Waveform::new(out, sample_rate_hz)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Split {
    Train,
    Val,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum StyleClass {
    Neutral,
    Expressive,
}

/// Corpus-size, speaker-count and seed descriptor.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct CorpusSpec {
    pub n_speakers: usize,
    pub utterances_per_speaker: usize,
    /// Speakers (the last ones) reserved as unseen for synthesizer training.
    /// Their voice parameters lie inside the range of the training speakers.
    pub held_out_speakers: usize,
    pub val_fraction: f64,
    pub sample_rate_hz: u32,
    pub min_phones: usize,
    pub max_phones: usize,
    /// Fraction of utterances drawn from the expressive style class.
    pub expressive_fraction: f64,
    /// Log-f0 standard deviation of expressive contours.
    pub expressiveness: f64,
    pub seed: u64,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        CorpusSpec {
            n_speakers: 16,
            utterances_per_speaker: 24,
            held_out_speakers: 1,
            val_fraction: 0.25,
            sample_rate_hz: 22050,
            min_phones: 6,
            max_phones: 9,
            expressive_fraction: 0.5,
            expressiveness: 0.25,
            seed: 7,
        }
    }
}

impl CorpusSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_speakers < 2 {
            return Err(Error::config("corpus needs at least 2 speakers"));
        }
        if self.utterances_per_speaker < 2 {
            return Err(Error::config("corpus needs at least 2 utterances per speaker"));
        }
        if self.held_out_speakers >= self.n_speakers {
            return Err(Error::config("at least one speaker must remain for training"));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(Error::config("val fraction must lie in [0, 1)"));
        }
        if self.min_phones == 0 || self.min_phones > self.max_phones {
            return Err(Error::config("need 1 <= min_phones <= max_phones"));
        }
        if !(0.0..=1.0).contains(&self.expressive_fraction) || self.expressiveness < 0.0 {
            return Err(Error::config("expressiveness settings out of range"));
        }
        if self.sample_rate_hz < 8000 {
            return Err(Error::config("sample rate must be at least 8 kHz"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Utterance {
    pub id: usize,
    pub speaker_id: u32,
    pub symbols: SymbolSequence,
    pub plan: UtterancePlan,
    pub waveform: Waveform,
    pub split: Split,
    pub style: StyleClass,
    pub render_seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub spec: CorpusSpec,
    pub speakers: Vec<SpeakerParams>,
    pub utterances: Vec<Utterance>,
    pub held_out: Vec<u32>,
}

impl Corpus {
    /// Assembles a corpus from parts, checking speaker references.
    pub fn from_parts(spec: CorpusSpec, speakers: Vec<SpeakerParams>, utterances: Vec<Utterance>, held_out: Vec<u32>) -> Result<Self> {
        for u in &utterances {
            if !speakers.iter().any(|s| s.speaker_id == u.speaker_id) {
                return Err(Error::invalid(alloc::format!("utterance {} references unknown speaker {}", u.id, u.speaker_id)));
            }
        }
        Ok(Corpus { spec, speakers, utterances, held_out })
    }

    pub fn speaker(&self, id: u32) -> Option<&SpeakerParams> {
        self.speakers.iter().find(|s| s.speaker_id == id)
    }

    pub fn is_held_out(&self, speaker_id: u32) -> bool {
        self.held_out.contains(&speaker_id)
    }

    pub fn speaker_ids(&self) -> Vec<u32> {
        self.speakers.iter().map(|s| s.speaker_id).collect()
    }

    pub fn utterances_of(&self, speaker_id: u32) -> impl Iterator<Item = &Utterance> {
        self.utterances.iter().filter(move |u| u.speaker_id == speaker_id)
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &Utterance> {
        self.utterances.iter().filter(move |u| u.split == split)
    }

    /// Utterances usable for synthesizer training: train split, seen speakers.
    pub fn synth_train(&self) -> impl Iterator<Item = &Utterance> {
        self.utterances.iter().filter(move |u| u.split == Split::Train && !self.is_held_out(u.speaker_id))
    }

    pub fn synth_val(&self) -> impl Iterator<Item = &Utterance> {
        self.utterances.iter().filter(move |u| u.split == Split::Val && !self.is_held_out(u.speaker_id))
    }
}

/// Derives an independent stream seed from a base seed and two indices.
pub fn mix_seed(seed: u64, a: u64, b: u64) -> u64 {
    // splitmix64 over the combined key
    let mut z = seed ^ a.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ b.wrapping_mul(0xD1B5_4A32_D192_ED03);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Draws `n` speakers. Base pitch, each formant center and the spectral tilt
/// are spread over `n` strata of their ranges with independent shuffles, so
/// any two speakers sit in different strata on every axis. The last
/// `interior` speakers never get an outermost stratum, which keeps them
/// inside the range spanned by the others.
pub fn generate_speakers(n: usize, interior: usize, seed: u64) -> Vec<SpeakerParams> {
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, 1, 0));
    let mut stratified = |lo: f64, hi: f64| -> Vec<f64> {
        let mut strata: Vec<usize> = (0..n).collect();
        strata.shuffle(&mut rng);
        if n >= 3 {
            let h = interior.min(n - 2);
            let mut inner: Vec<usize> = (1..n - 1).collect();
            inner.shuffle(&mut rng);
            let tail = &inner[..h];
            let mut head: Vec<usize> = (0..n).filter(|k| !tail.contains(k)).collect();
            head.shuffle(&mut rng);
            head.extend_from_slice(tail);
            strata = head;
        }
        strata.iter().map(|&k| lo + (hi - lo) * (k as f64 + rng.random_range(0.2..0.8)) / n as f64).collect()
    };
    let pitch = stratified(90.0, 250.0);
    let f1 = stratified(450.0, 800.0);
    let f2 = stratified(1200.0, 2000.0);
    let f3 = stratified(2400.0, 3200.0);
    let tilt = stratified(-9.0, -3.0);
    (0..n)
        .map(|i| SpeakerParams {
            speaker_id: i as u32,
            formant_centers_hz: vec![f1[i], f2[i], f3[i]],
            spectral_tilt_db_per_octave: tilt[i],
            base_pitch_hz: pitch[i],
        })
        .collect()
}

/// Draws a plan: silence, `min..=max` pseudo-phones, silence.
pub fn generate_plan(speaker: &SpeakerParams, style: StyleClass, spec: &CorpusSpec, seed: u64) -> Result<UtterancePlan> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let n_phones = rng.random_range(spec.min_phones..=spec.max_phones);
    let mut symbols = vec![SILENCE];
    for _ in 0..n_phones {
        symbols.push(rng.random_range(1..ALPHABET_SIZE as u8));
    }
    symbols.push(SILENCE);
    let base = speaker.base_pitch_hz;
    let n = symbols.len();
    let durations: Vec<f64> = symbols
        .iter()
        .map(|&sym| {
            if sym == SILENCE {
                rng.random_range(70.0..100.0)
            } else {
                match style {
                    StyleClass::Neutral => rng.random_range(75.0..110.0),
                    StyleClass::Expressive => rng.random_range(55.0..150.0),
                }
            }
        })
        .collect();
    // f0 anchors at every symbol boundary; voiced symbols interpolate between them.
    // Expressive contours chase random log-f0 targets under a glide-rate limit so
    // each analysis frame stays close to periodic.
    let mut anchors = Vec::with_capacity(n + 1);
    let mut elapsed = 0.0;
    let total: f64 = durations.iter().sum();
    let mut log_f0 = match style {
        StyleClass::Neutral => 0.05,
        StyleClass::Expressive => 0.5 * spec.expressiveness * normal.sample(&mut rng),
    };
    anchors.push(log_f0);
    for &d in &durations {
        elapsed += d;
        log_f0 = match style {
            StyleClass::Neutral => 0.05 - 0.12 * elapsed / total + 0.01 * normal.sample(&mut rng),
            StyleClass::Expressive => {
                let target = spec.expressiveness * normal.sample(&mut rng);
                let max_step = MAX_GLIDE_PER_S * d / 1000.0;
                log_f0 + (target - log_f0).clamp(-max_step, max_step)
            }
        };
        anchors.push(log_f0);
    }
    let anchors: Vec<f64> = anchors.into_iter().map(|l| (base * l.exp()).clamp(70.0, 450.0)).collect();
    let segments = symbols
        .iter()
        .enumerate()
        .map(|(i, &sym)| {
            let duration_ms = durations[i];
            let voiced = is_voiced_symbol(sym);
            let (f0_start_hz, f0_end_hz) = if voiced { (anchors[i], anchors[i + 1]) } else { (0.0, 0.0) };
            PlanSegment { symbol: sym, duration_ms, f0_start_hz, f0_end_hz, voiced }
        })
        .collect();
    UtterancePlan::new(segments)
}

/// Plans one utterance: its style class, plan and render seed.
fn plan_utterance(spec: &CorpusSpec, speaker: &SpeakerParams, index: usize) -> Result<(StyleClass, UtterancePlan, u64)> {
    let key = mix_seed(spec.seed, 2, index as u64);
    let mut rng = ChaCha8Rng::seed_from_u64(key);
    let style = if rng.random::<f64>() < spec.expressive_fraction { StyleClass::Expressive } else { StyleClass::Neutral };
    let plan = generate_plan(speaker, style, spec, mix_seed(key, 3, 0))?;
    Ok((style, plan, mix_seed(key, 4, 0)))
}

/// Generates the corpus. Output depends only on `spec`.
pub fn generate_corpus(spec: &CorpusSpec) -> Result<Corpus> {
    spec.validate()?;
    let speakers = generate_speakers(spec.n_speakers, spec.held_out_speakers, spec.seed);
    let mut utterances = Vec::with_capacity(spec.n_speakers * spec.utterances_per_speaker);
    let n_val = ((spec.utterances_per_speaker as f64 * spec.val_fraction).ceil() as usize).min(spec.utterances_per_speaker - 1);
    for speaker in &speakers {
        let mut order: Vec<usize> = (0..spec.utterances_per_speaker).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(mix_seed(spec.seed, 5, speaker.speaker_id as u64)));
        for k in 0..spec.utterances_per_speaker {
            let id = utterances.len();
            let (style, plan, render_seed) = plan_utterance(spec, speaker, id)?;
            let waveform = render_utterance(speaker, &plan, spec.sample_rate_hz, render_seed)?;
            let split = if order[k] < n_val { Split::Val } else { Split::Train };
            utterances.push(Utterance {
                id,
                speaker_id: speaker.speaker_id,
                symbols: plan.symbols(),
                plan,
                waveform,
                split,
                style,
                render_seed,
            });
        }
    }
    let held_out = speakers[spec.n_speakers - spec.held_out_speakers..].iter().map(|s| s.speaker_id).collect();
    Corpus::from_parts(spec.clone(), speakers, utterances, held_out)
}
