#[allow(unused_imports)] // shadowed by inherent methods when std is linked
use num_traits::Float;
use alloc::vec::Vec;

use super::{stft_magnitude, FrameConfig, Waveform};
use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Mel scale, `2595 log10(1 + f / 700)`.
pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10.0.powf(mel / 2595.0) - 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MelConfig {
    pub frame: FrameConfig,
    pub n_mels: usize,
    pub fmin_hz: f64,
    pub fmax_hz: f64,
    pub log_floor: f64,
}

impl MelConfig {
    /// 80-channel configuration used by the synthesizer and style tokens.
    pub fn synth() -> Self {
        MelConfig { frame: FrameConfig::default(), n_mels: 80, fmin_hz: 0.0, fmax_hz: 8000.0, log_floor: 1e-5 }
    }

    /// 40-channel configuration consumed by the speaker encoder.
    pub fn speaker() -> Self {
        MelConfig { n_mels: 40, ..MelConfig::synth() }
    }

    pub fn validate(&self, sample_rate_hz: u32) -> Result<()> {
        self.frame.validate()?;
        let nyquist = sample_rate_hz as f64 / 2.0;
        if self.n_mels == 0 {
            return Err(Error::config("n_mels must be at least 1"));
        }
        if !(self.fmin_hz >= 0.0 && self.fmin_hz < self.fmax_hz && self.fmax_hz <= nyquist) {
            return Err(Error::config(alloc::format!(
                "need 0 <= fmin < fmax <= nyquist ({}), got [{}, {}]",
                nyquist,
                self.fmin_hz,
                self.fmax_hz
            )));
        }
        if !(self.log_floor > 0.0) {
            return Err(Error::config("log floor must be positive"));
        }
        Ok(())
    }

    pub fn log_floor_value(&self) -> f64 {
        self.log_floor.ln()
    }
}

impl Default for MelConfig {
    fn default() -> Self {
        MelConfig::synth()
    }
}

/// Log-mel energies, one row per analysis frame.
#[derive(Debug, Clone, PartialEq)]
pub struct MelSpectrogram {
    frames: Matrix,
    config: MelConfig,
}

impl MelSpectrogram {
    /// Wraps a `T x n_mels` matrix, clamping entries below the log floor.
    pub fn new(mut frames: Matrix, config: MelConfig) -> Result<Self> {
        if frames.rows() == 0 {
            return Err(Error::Empty("mel spectrogram has no frames"));
        }
        if frames.cols() != config.n_mels {
            return Err(Error::shape(
                "MelSpectrogram::new",
                alloc::format!("{} columns for {} mel channels", frames.cols(), config.n_mels),
            ));
        }
        let floor = config.log_floor_value();
        for v in frames.as_mut_slice() {
            if !v.is_finite() {
                return Err(Error::invalid("non-finite mel value"));
            }
            if *v < floor {
                *v = floor;
            }
        }
        Ok(MelSpectrogram { frames, config })
    }

    pub fn frames(&self) -> &Matrix {
        &self.frames
    }

    pub fn config(&self) -> &MelConfig {
        &self.config
    }

    pub fn n_frames(&self) -> usize {
        self.frames.rows()
    }

    pub fn n_mels(&self) -> usize {
        self.frames.cols()
    }

    pub fn into_frames(self) -> Matrix {
        self.frames
    }
}

/// Triangular filterbank, `n_mels x (fft_size/2 + 1)`, with unit peaks at
/// mel-spaced centers between `fmin` and `fmax`.
pub fn mel_filterbank(cfg: &MelConfig, sample_rate_hz: u32) -> Result<Matrix> {
    cfg.validate(sample_rate_hz)?;
    let bins = cfg.frame.n_bins();
    let lo = hz_to_mel(cfg.fmin_hz);
    let hi = hz_to_mel(cfg.fmax_hz);
    let points: Vec<f64> = (0..cfg.n_mels + 2)
        .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (cfg.n_mels + 1) as f64))
        .collect();
    let bin_hz = sample_rate_hz as f64 / cfg.frame.fft_size as f64;
    let mut fb = Matrix::zeros(cfg.n_mels, bins);
    for m in 0..cfg.n_mels {
        let (left, center, right) = (points[m], points[m + 1], points[m + 2]);
        for k in 0..bins {
            let f = k as f64 * bin_hz;
            let w = if f > left && f <= center {
                (f - left) / (center - left)
            } else if f > center && f < right {
                (right - f) / (right - center)
            } else {
                0.0
            };
            fb.set(m, k, w);
        }
    }
    Ok(fb)
}

/// `log(max(filterbank . |STFT|, floor))` per frame.
pub fn mel_spectrogram(wave: &Waveform, cfg: &MelConfig) -> Result<MelSpectrogram> {
    cfg.validate(wave.sample_rate_hz())?;
    let mag = stft_magnitude(wave, &cfg.frame)?;
    let fb = mel_filterbank(cfg, wave.sample_rate_hz())?;
    let mut energies = mag.matmul(&fb.transpose())?;
    for v in energies.as_mut_slice() {
        *v = v.max(cfg.log_floor).ln();
    }
    MelSpectrogram::new(energies, *cfg)
}
