//! Framing, spectral analysis, mel filterbanks and Griffin-Lim inversion.

mod fft;
mod griffin_lim;
mod mel;
mod stft;

pub use fft::Fft;
pub use griffin_lim::{griffin_lim, griffin_lim_from_mel, GriffinLimRun};
pub use mel::{hz_to_mel, mel_filterbank, mel_spectrogram, mel_to_hz, MelConfig, MelSpectrogram};
pub use stft::{hann_window, istft, stft, stft_magnitude, ComplexSpectrogram};

use alloc::vec::Vec;

use crate::error::{Error, Result};

/// Mono audio with its sample rate. Samples are finite and within `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    samples: Vec<f64>,
    sample_rate_hz: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate_hz: u32) -> Result<Self> {
        if sample_rate_hz == 0 {
            return Err(Error::invalid("sample rate must be positive"));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite() || s.abs() > 1.0) {
            return Err(Error::invalid(alloc::format!(
                "sample {} = {} is not a finite value in [-1, 1]",
                i,
                samples[i]
            )));
        }
        Ok(Waveform { samples, sample_rate_hz })
    }

    /// Builds a waveform after clamping every sample into `[-1, 1]`.
    /// Non-finite samples are replaced by zero.
    pub fn from_clamped(samples: Vec<f64>, sample_rate_hz: u32) -> Result<Self> {
        let samples = samples
            .into_iter()
            .map(|s| if s.is_finite() { s.clamp(-1.0, 1.0) } else { 0.0 })
            .collect();
        Waveform::new(samples, sample_rate_hz)
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn sample_rate_hz(&self) -> u32 {
        self.sample_rate_hz
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate_hz as f64
    }

    pub fn peak(&self) -> f64 {
        self.samples.iter().fold(0.0, |m, s| m.max(s.abs()))
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }
}

/// Analysis framing. Frames start every `hop_length` samples and span
/// `window_length` samples; each is Hann-windowed and zero-padded to `fft_size`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct FrameConfig {
    pub window_length: usize,
    pub hop_length: usize,
    pub fft_size: usize,
}

impl Default for FrameConfig {
    fn default() -> Self {
        FrameConfig { window_length: 1024, hop_length: 256, fft_size: 1024 }
    }
}

impl FrameConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hop_length == 0 {
            return Err(Error::config("hop length must be positive"));
        }
        if self.hop_length > self.window_length || self.window_length > self.fft_size {
            return Err(Error::config(alloc::format!(
                "need hop <= window <= fft, got hop={} window={} fft={}",
                self.hop_length,
                self.window_length,
                self.fft_size
            )));
        }
        if !self.fft_size.is_power_of_two() {
            return Err(Error::config(alloc::format!("fft size {} is not a power of two", self.fft_size)));
        }
        Ok(())
    }

    /// Number of complete frames in a signal of `len` samples.
    pub fn frame_count(&self, len: usize) -> usize {
        if len < self.window_length {
            0
        } else {
            1 + (len - self.window_length) / self.hop_length
        }
    }

    /// Signal length produced by overlap-adding `frames` frames.
    pub fn signal_length(&self, frames: usize) -> usize {
        if frames == 0 {
            0
        } else {
            (frames - 1) * self.hop_length + self.window_length
        }
    }

    pub fn n_bins(&self) -> usize {
        self.fft_size / 2 + 1
    }
}
