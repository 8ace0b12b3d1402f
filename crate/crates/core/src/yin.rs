//! Yin fundamental-frequency estimation and pitch-contour arithmetic.
//!
//! Each analysis frame spans `window_length` samples starting every
//! `hop_length` samples, so a contour has exactly as many frames as the
//! matching STFT. Within a frame the difference function integrates over
//! the first `window_length - max_lag` samples.

#[allow(unused_imports)] // shadowed by inherent methods when std is linked
use num_traits::Float;
use alloc::vec;
use alloc::vec::Vec;

use crate::dsp::{FrameConfig, Waveform};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct YinConfig {
    pub frame: FrameConfig,
    pub fmin_hz: f64,
    pub fmax_hz: f64,
    /// Cutoff on the cumulative-mean-normalized difference, within `[0.1, 0.25]`.
    pub harmonicity_threshold: f64,
}

impl Default for YinConfig {
    fn default() -> Self {
        YinConfig { frame: FrameConfig::default(), fmin_hz: 65.0, fmax_hz: 500.0, harmonicity_threshold: 0.15 }
    }
}

impl YinConfig {
    pub fn with_threshold(threshold: f64) -> Self {
        YinConfig { harmonicity_threshold: threshold, ..YinConfig::default() }
    }

    pub fn validate(&self) -> Result<()> {
        self.frame.validate()?;
        if !(0.1..=0.25).contains(&self.harmonicity_threshold) {
            return Err(Error::config(alloc::format!(
                "harmonicity threshold {} outside [0.1, 0.25]",
                self.harmonicity_threshold
            )));
        }
        if !(self.fmin_hz > 0.0 && self.fmin_hz < self.fmax_hz) {
            return Err(Error::config("need 0 < fmin < fmax"));
        }
        Ok(())
    }

    fn lag_range(&self, sample_rate_hz: u32) -> (usize, usize) {
        let sr = sample_rate_hz as f64;
        let min_lag = ((sr / self.fmax_hz).ceil() as usize).max(2);
        let max_lag = (sr / self.fmin_hz).floor() as usize;
        (min_lag, max_lag)
    }
}

/// Per-frame f0 with voicing. Unvoiced frames carry `f0 = 0.0`.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PitchContour {
    f0_hz: Vec<f64>,
    voiced: Vec<bool>,
    hop_length_samples: usize,
    sample_rate_hz: u32,
}

impl PitchContour {
    pub fn new(f0_hz: Vec<f64>, voiced: Vec<bool>, hop_length_samples: usize, sample_rate_hz: u32) -> Result<Self> {
        if f0_hz.len() != voiced.len() {
            return Err(Error::shape("PitchContour::new", "f0 and voicing lengths differ"));
        }
        for (i, (&f, &v)) in f0_hz.iter().zip(&voiced).enumerate() {
            let ok = if v { f.is_finite() && f > 0.0 } else { f == 0.0 };
            if !ok {
                return Err(Error::invalid(alloc::format!(
                    "frame {}: f0 {} inconsistent with voicing {}",
                    i,
                    f,
                    v
                )));
            }
        }
        Ok(PitchContour { f0_hz, voiced, hop_length_samples, sample_rate_hz })
    }

    /// Builds a contour where any positive f0 marks a voiced frame.
    pub fn from_f0(f0_hz: Vec<f64>, hop_length_samples: usize, sample_rate_hz: u32) -> Result<Self> {
        let voiced = f0_hz.iter().map(|&f| f > 0.0).collect();
        let f0 = f0_hz.into_iter().map(|f| if f > 0.0 { f } else { 0.0 }).collect();
        PitchContour::new(f0, voiced, hop_length_samples, sample_rate_hz)
    }

    pub fn len(&self) -> usize {
        self.f0_hz.len()
    }

    pub fn is_empty(&self) -> bool {
        self.f0_hz.is_empty()
    }

    pub fn f0_hz(&self) -> &[f64] {
        &self.f0_hz
    }

    pub fn voiced(&self) -> &[bool] {
        &self.voiced
    }

    pub fn hop_length_samples(&self) -> usize {
        self.hop_length_samples
    }

    pub fn sample_rate_hz(&self) -> u32 {
        self.sample_rate_hz
    }

    pub fn voiced_count(&self) -> usize {
        self.voiced.iter().filter(|v| **v).count()
    }

    /// Time of frame `i` in seconds (frame start).
    pub fn frame_time_s(&self, i: usize) -> f64 {
        (i * self.hop_length_samples) as f64 / self.sample_rate_hz as f64
    }

    /// Nearest-frame resampling to `frames` frames.
    pub fn resample_nearest(&self, frames: usize) -> PitchContour {
        let n = self.len();
        let mut f0 = Vec::with_capacity(frames);
        let mut voiced = Vec::with_capacity(frames);
        for i in 0..frames {
            let src = if n == 0 || frames <= 1 {
                0
            } else {
                ((i as f64 * (n - 1) as f64 / (frames - 1) as f64).round() as usize).min(n - 1)
            };
            if n == 0 {
                f0.push(0.0);
                voiced.push(false);
            } else {
                f0.push(self.f0_hz[src]);
                voiced.push(self.voiced[src]);
            }
        }
        PitchContour { f0_hz: f0, voiced, hop_length_samples: self.hop_length_samples, sample_rate_hz: self.sample_rate_hz }
    }
}

/// Cumulative-mean-normalized difference `d'(tau)` for `tau = 0..=max_lag`
/// over the first `integration` samples of `frame`. `d'(0) = 1`, and any lag
/// whose running sum is zero also maps to 1.
pub fn cmnd(frame: &[f64], integration: usize, max_lag: usize) -> Vec<f64> {
    let mut d = vec![0.0; max_lag + 1];
    for (tau, slot) in d.iter_mut().enumerate().skip(1) {
        let mut acc = 0.0;
        for j in 0..integration {
            let diff = frame[j] - frame[j + tau];
            acc += diff * diff;
        }
        *slot = acc;
    }
    let mut out = vec![1.0; max_lag + 1];
    let mut running = 0.0;
    for tau in 1..=max_lag {
        running += d[tau];
        out[tau] = if running > 0.0 { d[tau] * tau as f64 / running } else { 1.0 };
    }
    out
}

/// Picks the period in samples from a CMND curve, or `None` if no lag in
/// `[min_lag, max_lag]` falls below `threshold`.
fn pick_period(dprime: &[f64], min_lag: usize, max_lag: usize, threshold: f64) -> Option<f64> {
    let first = (min_lag..=max_lag).find(|&tau| dprime[tau] < threshold)?;
    // Walk down to the bottom of the dip, at most a quarter period further.
    let limit = (first + first / 4).min(max_lag);
    let mut tau = first;
    while tau < limit && dprime[tau + 1] < dprime[tau] {
        tau += 1;
    }
    let mut period = tau as f64;
    if tau > 0 && tau < dprime.len() - 1 {
        let (a, b, c) = (dprime[tau - 1], dprime[tau], dprime[tau + 1]);
        let denom = a - 2.0 * b + c;
        if denom.abs() > 1e-12 {
            let shift = 0.5 * (a - c) / denom;
            if shift.abs() < 1.0 {
                period += shift;
            }
        }
    }
    Some(period.clamp(min_lag as f64, max_lag as f64))
}

/// Yin pitch tracking.
pub fn extract_pitch(wave: &Waveform, cfg: &YinConfig) -> Result<PitchContour> {
    cfg.validate()?;
    let sr = wave.sample_rate_hz();
    let (min_lag, max_lag) = cfg.lag_range(sr);
    let window = cfg.frame.window_length;
    if max_lag >= window || min_lag > max_lag {
        return Err(Error::config(alloc::format!(
            "window of {} samples cannot hold lags up to {}",
            window,
            max_lag
        )));
    }
    let needed = (2 * max_lag).max(window);
    if wave.len() < needed {
        return Err(Error::TooShort { needed, got: wave.len() });
    }
    let integration = window - max_lag;
    let frames = cfg.frame.frame_count(wave.len());
    let samples = wave.samples();
    let mut f0 = Vec::with_capacity(frames);
    let mut voiced = Vec::with_capacity(frames);
    for m in 0..frames {
        let start = m * cfg.frame.hop_length;
        let frame = &samples[start..start + window];
        let dprime = cmnd(frame, integration, max_lag);
        match pick_period(&dprime, min_lag, max_lag, cfg.harmonicity_threshold) {
            Some(period) => {
                f0.push(sr as f64 / period);
                voiced.push(true);
            }
            None => {
                f0.push(0.0);
                voiced.push(false);
            }
        }
    }
    PitchContour::new(f0, voiced, cfg.frame.hop_length, sr)
}

/// Mean f0 over voiced frames pooled across all contours.
pub fn mean_pitch(contours: &[PitchContour]) -> Result<f64> {
    let (sum, n) = contours
        .iter()
        .flat_map(|c| c.f0_hz.iter().zip(&c.voiced))
        .filter(|(_, v)| **v)
        .fold((0.0, 0usize), |(s, n), (f, _)| (s + f, n + 1));
    if n == 0 {
        return Err(Error::Empty("no voiced frames to average"));
    }
    Ok(sum / n as f64)
}

/// Multiplies every voiced f0 by `target_mean / mean(voiced f0)`.
pub fn scale_pitch_to_mean(contour: &PitchContour, target_mean_hz: f64) -> Result<PitchContour> {
    if !(target_mean_hz > 0.0 && target_mean_hz.is_finite()) {
        return Err(Error::invalid("target mean pitch must be positive"));
    }
    let current = mean_pitch(core::slice::from_ref(contour))?;
    let mut out = contour.clone();
    if current == target_mean_hz {
        return Ok(out);
    }
    let factor = target_mean_hz / current;
    for (f, v) in out.f0_hz.iter_mut().zip(&out.voiced) {
        if *v {
            *f *= factor;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn contour(f0: &[f64]) -> PitchContour {
        PitchContour::from_f0(f0.to_vec(), 256, 22050).unwrap()
    }

    fn sine(freq: f64, len: usize) -> Waveform {
        let s = (0..len)
            .map(|i| 0.5 * (2.0 * core::f64::consts::PI * freq * i as f64 / 22050.0).sin())
            .collect();
        Waveform::new(s, 22050).unwrap()
    }

    /// Period by exhaustive search over candidate lags: the lag with the
    /// largest normalized autocorrelation whose value is close to the best.
    fn autocorrelation_period(frame: &[f64], min_lag: usize, max_lag: usize) -> usize {
        let n = frame.len() - max_lag;
        let r: Vec<f64> = (0..=max_lag)
            .map(|tau| (0..n).map(|j| frame[j] * frame[j + tau]).sum::<f64>())
            .collect();
        let best = (min_lag..=max_lag).map(|t| r[t]).fold(f64::MIN, f64::max);
        (min_lag..=max_lag).find(|&t| r[t] >= 0.95 * best && r[t] >= r[t - 1] && r[t] >= r[t + 1]).unwrap()
    }

    #[test]
    fn sine_220_is_recovered_within_one_hz() {
        let w = sine(220.0, 22050);
        let c = extract_pitch(&w, &YinConfig::default()).unwrap();
        assert!(c.voiced().iter().all(|v| *v));
        let (lo, hi) = YinConfig::default().lag_range(22050);
        let oracle = 22050.0 / autocorrelation_period(&w.samples()[..1024], lo, hi) as f64;
        assert!((oracle - 220.0).abs() < 2.0);
        for f in c.f0_hz() {
            assert!((f - 220.0).abs() < 1.0, "f0 {}", f);
        }
    }

    #[test]
    fn silence_is_unvoiced() {
        let w = Waveform::new(vec![0.0; 4096], 22050).unwrap();
        let c = extract_pitch(&w, &YinConfig::default()).unwrap();
        assert_eq!(c.voiced_count(), 0);
        assert!(c.f0_hz().iter().all(|&f| f == 0.0));
    }

    #[test]
    fn quiet_noise_is_mostly_unvoiced() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let s: Vec<f64> = (0..22050).map(|_| 0.01 * (rng.random::<f64>() * 2.0 - 1.0)).collect();
        let w = Waveform::new(s, 22050).unwrap();
        let cfg = YinConfig::default();
        let c = extract_pitch(&w, &cfg).unwrap();
        // Oracle: the threshold definition applied to the exhaustively computed CMND.
        let (lo, hi) = cfg.lag_range(22050);
        let mut oracle_voiced = 0;
        for m in 0..c.len() {
            let frame = &w.samples()[m * 256..m * 256 + 1024];
            let dp = cmnd(frame, 1024 - hi, hi);
            if (lo..=hi).any(|t| dp[t] < cfg.harmonicity_threshold) {
                oracle_voiced += 1;
            }
        }
        assert_eq!(oracle_voiced, c.voiced_count());
        assert!(c.len() - c.voiced_count() >= (9 * c.len()) / 10);
    }

    #[test]
    fn threshold_outside_band_is_rejected() {
        let w = sine(200.0, 4096);
        assert!(extract_pitch(&w, &YinConfig::with_threshold(0.3)).is_err());
        assert!(extract_pitch(&w, &YinConfig::with_threshold(0.05)).is_err());
    }

    #[test]
    fn short_input_is_rejected() {
        let w = sine(200.0, 500);
        assert!(matches!(extract_pitch(&w, &YinConfig::default()), Err(Error::TooShort { .. })));
    }

    #[test]
    fn raising_threshold_never_loses_voiced_frames() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let s: Vec<f64> = (0..16000)
            .map(|i| {
                let t = i as f64 / 22050.0;
                0.2 * (2.0 * core::f64::consts::PI * 150.0 * t).sin() + 0.1 * (rng.random::<f64>() - 0.5)
            })
            .collect();
        let w = Waveform::new(s, 22050).unwrap();
        let mut last = 0;
        for th in [0.1, 0.12, 0.15, 0.2, 0.25] {
            let n = extract_pitch(&w, &YinConfig::with_threshold(th)).unwrap().voiced_count();
            assert!(n >= last);
            last = n;
        }
    }

    #[test]
    fn scaling_examples() {
        let c = scale_pitch_to_mean(&contour(&[200.0, 200.0]), 100.0).unwrap();
        assert_eq!(c.f0_hz(), &[100.0, 100.0]);
        let c = scale_pitch_to_mean(&contour(&[100.0, 300.0]), 100.0).unwrap();
        assert_eq!(c.f0_hz(), &[50.0, 150.0]);
        let orig = contour(&[123.4, 0.0, 211.7]);
        let same = scale_pitch_to_mean(&orig, mean_pitch(core::slice::from_ref(&orig)).unwrap()).unwrap();
        assert_eq!(same, orig);
        assert!(scale_pitch_to_mean(&contour(&[0.0, 0.0]), 100.0).is_err());
    }

    #[test]
    fn mean_pitch_examples() {
        assert_eq!(mean_pitch(&[contour(&[100.0, 200.0, 300.0])]).unwrap(), 200.0);
        assert_eq!(mean_pitch(&[contour(&[100.0]), contour(&[300.0])]).unwrap(), 200.0);
        assert_eq!(mean_pitch(&[contour(&[0.0, 150.0, 0.0])]).unwrap(), 150.0);
        assert!(mean_pitch(&[contour(&[0.0])]).is_err());
    }

    proptest::proptest! {
        #[test]
        fn scaling_composes(
            f0 in proptest::collection::vec(prop_f0(), 1..30),
            m1 in 50.0f64..400.0,
            m2 in 50.0f64..400.0,
        ) {
            let c = contour(&f0);
            proptest::prop_assume!(c.voiced_count() > 0);
            let direct = scale_pitch_to_mean(&c, m2).unwrap();
            let twice = scale_pitch_to_mean(&scale_pitch_to_mean(&c, m1).unwrap(), m2).unwrap();
            let again = scale_pitch_to_mean(&direct, m2).unwrap();
            proptest::prop_assert_eq!(direct.voiced(), c.voiced());
            for ((a, b), d) in direct.f0_hz().iter().zip(twice.f0_hz()).zip(again.f0_hz()) {
                proptest::prop_assert!((a - b).abs() <= 1e-9 * a.abs().max(1.0));
                proptest::prop_assert!((a - d).abs() <= 1e-9 * a.abs().max(1.0));
            }
        }
    }

    fn prop_f0() -> impl proptest::strategy::Strategy<Value = f64> {
        use proptest::prelude::*;
        prop_oneof![Just(0.0), 60.0f64..500.0]
    }
}
