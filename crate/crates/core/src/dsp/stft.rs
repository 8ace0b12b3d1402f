#[allow(unused_imports)] // shadowed by inherent methods when std is linked
use num_traits::Float;
use alloc::vec;
use alloc::vec::Vec;

use super::{Fft, FrameConfig, Waveform};
use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Periodic Hann window.
pub fn hann_window(len: usize) -> Vec<f64> {
    let n = len as f64;
    (0..len)
        .map(|i| 0.5 - 0.5 * (2.0 * core::f64::consts::PI * i as f64 / n).cos())
        .collect()
}

/// One-sided complex STFT, `frames x (fft_size/2 + 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexSpectrogram {
    pub re: Matrix,
    pub im: Matrix,
}

impl ComplexSpectrogram {
    pub fn frames(&self) -> usize {
        self.re.rows()
    }

    pub fn magnitude(&self) -> Matrix {
        let mut out = Matrix::zeros(self.re.rows(), self.re.cols());
        for ((o, r), i) in out.as_mut_slice().iter_mut().zip(self.re.as_slice()).zip(self.im.as_slice()) {
            *o = (r * r + i * i).sqrt();
        }
        out
    }
}

fn check_length(samples: &[f64], cfg: &FrameConfig) -> Result<()> {
    cfg.validate()?;
    if samples.len() < cfg.window_length {
        return Err(Error::TooShort { needed: cfg.window_length, got: samples.len() });
    }
    Ok(())
}

pub(crate) fn stft_samples(samples: &[f64], cfg: &FrameConfig) -> Result<ComplexSpectrogram> {
    check_length(samples, cfg)?;
    let fft = Fft::new(cfg.fft_size)?;
    let window = hann_window(cfg.window_length);
    let frames = cfg.frame_count(samples.len());
    let bins = cfg.n_bins();
    let mut re = Matrix::zeros(frames, bins);
    let mut im = Matrix::zeros(frames, bins);
    let mut buf_re = vec![0.0; cfg.fft_size];
    let mut buf_im = vec![0.0; cfg.fft_size];
    for m in 0..frames {
        let start = m * cfg.hop_length;
        buf_re.iter_mut().for_each(|v| *v = 0.0);
        buf_im.iter_mut().for_each(|v| *v = 0.0);
        for (j, w) in window.iter().enumerate() {
            buf_re[j] = samples[start + j] * w;
        }
        fft.forward(&mut buf_re, &mut buf_im);
        re.row_mut(m).copy_from_slice(&buf_re[..bins]);
        im.row_mut(m).copy_from_slice(&buf_im[..bins]);
    }
    Ok(ComplexSpectrogram { re, im })
}

/// Complex short-time Fourier transform without edge padding.
pub fn stft(wave: &Waveform, cfg: &FrameConfig) -> Result<ComplexSpectrogram> {
    stft_samples(wave.samples(), cfg)
}

/// Magnitude STFT, `T x (fft_size/2 + 1)` with `T = 1 + (len - window) / hop`.
pub fn stft_magnitude(wave: &Waveform, cfg: &FrameConfig) -> Result<Matrix> {
    Ok(stft(wave, cfg)?.magnitude())
}

/// Least-squares inverse STFT: windowed overlap-add divided by the summed
/// squared window. Samples with zero window support are set to zero.
pub fn istft(spec: &ComplexSpectrogram, cfg: &FrameConfig) -> Result<Vec<f64>> {
    cfg.validate()?;
    let bins = cfg.n_bins();
    if spec.re.cols() != bins || spec.im.cols() != bins || spec.re.rows() != spec.im.rows() {
        return Err(Error::shape("istft", alloc::format!("expected {} bins", bins)));
    }
    let frames = spec.frames();
    let fft = Fft::new(cfg.fft_size)?;
    let window = hann_window(cfg.window_length);
    let len = cfg.signal_length(frames);
    let mut out = vec![0.0; len];
    let mut norm = vec![0.0; len];
    let n = cfg.fft_size;
    let mut buf_re = vec![0.0; n];
    let mut buf_im = vec![0.0; n];
    for m in 0..frames {
        let (r, i) = (spec.re.row(m), spec.im.row(m));
        buf_re[..bins].copy_from_slice(r);
        buf_im[..bins].copy_from_slice(i);
        for k in bins..n {
            buf_re[k] = r[n - k];
            buf_im[k] = -i[n - k];
        }
        fft.inverse(&mut buf_re, &mut buf_im);
        let start = m * cfg.hop_length;
        for (j, w) in window.iter().enumerate() {
            out[start + j] += w * buf_re[j];
            norm[start + j] += w * w;
        }
    }
    for (o, w) in out.iter_mut().zip(&norm) {
        *o = if *w > 1e-10 { *o / w } else { 0.0 };
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::Waveform;

    fn sine(freq: f64, rate: u32, len: usize, amp: f64) -> Waveform {
        let s = (0..len)
            .map(|i| amp * (2.0 * core::f64::consts::PI * freq * i as f64 / rate as f64).sin())
            .collect();
        Waveform::new(s, rate).unwrap()
    }

    #[test]
    fn zero_signal_has_zero_magnitude() {
        let w = Waveform::new(vec![0.0; 4000], 22050).unwrap();
        let m = stft_magnitude(&w, &FrameConfig::default()).unwrap();
        assert_eq!(m.rows(), 1 + (4000 - 1024) / 256);
        assert!(m.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn too_short_is_a_length_error() {
        let w = Waveform::new(vec![0.0; 1000], 22050).unwrap();
        assert_eq!(
            stft_magnitude(&w, &FrameConfig::default()).unwrap_err(),
            Error::TooShort { needed: 1024, got: 1000 }
        );
    }

    #[test]
    fn sine_peaks_at_expected_bin() {
        // round(440 * 1024 / 22050) = 20
        let w = sine(440.0, 22050, 8192, 0.5);
        let m = stft_magnitude(&w, &FrameConfig::default()).unwrap();
        for row in m.iter_rows() {
            let (arg, _) = row
                .iter()
                .enumerate()
                .fold((0, f64::MIN), |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc });
            assert_eq!(arg, 20);
        }
    }

    #[test]
    fn one_sided_parseval_holds_per_frame() {
        let cfg = FrameConfig::default();
        let samples: Vec<f64> = (0..5000).map(|i| (((i * 7919) % 1000) as f64 / 1000.0 - 0.5) * 0.8).collect();
        let w = Waveform::new(samples.clone(), 22050).unwrap();
        let m = stft_magnitude(&w, &cfg).unwrap();
        let win = hann_window(cfg.window_length);
        let mut spec_energy = 0.0;
        let mut time_energy = 0.0;
        for t in 0..m.rows() {
            let row = m.row(t);
            let last = row.len() - 1;
            for (k, v) in row.iter().enumerate() {
                let weight = if k == 0 || k == last { 1.0 } else { 2.0 };
                spec_energy += weight * v * v;
            }
            for (j, wv) in win.iter().enumerate() {
                let x = samples[t * cfg.hop_length + j] * wv;
                time_energy += x * x;
            }
        }
        let ratio = spec_energy / (cfg.fft_size as f64 * time_energy);
        assert!((ratio - 1.0).abs() < 0.01, "ratio {}", ratio);
    }

    #[test]
    fn istft_inverts_stft_in_the_interior() {
        let cfg = FrameConfig::default();
        let w = sine(313.0, 22050, 6000, 0.7);
        let spec = stft(&w, &cfg).unwrap();
        let back = istft(&spec, &cfg).unwrap();
        for i in 200..back.len() - 200 {
            assert!((back[i] - w.samples()[i]).abs() < 1e-9);
        }
    }
}
