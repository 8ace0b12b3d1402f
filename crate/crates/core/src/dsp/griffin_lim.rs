#[allow(unused_imports)] // shadowed by inherent methods when std is linked
use num_traits::Float;
use alloc::vec::Vec;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::stft::stft_samples;
use super::{istft, mel_filterbank, ComplexSpectrogram, FrameConfig, MelSpectrogram, Waveform};
use crate::error::{Error, Result};
use crate::linalg::pinv_rows;
use crate::matrix::Matrix;

const PHASE_SEED: u64 = 0x6772_6966_6669_6e;

/// Output of a Griffin-Lim run.
#[derive(Debug, Clone)]
pub struct GriffinLimRun {
    pub waveform: Waveform,
    /// Frobenius distance between the target magnitude and the magnitude of
    /// the current estimate: entry 0 is the random-phase initialization,
    /// entry `i` is after iteration `i`.
    pub distances: Vec<f64>,
}

fn magnitude_distance(target: &Matrix, spec: &ComplexSpectrogram) -> f64 {
    let mut acc = 0.0;
    for ((t, r), i) in target.as_slice().iter().zip(spec.re.as_slice()).zip(spec.im.as_slice()) {
        let d = (r * r + i * i).sqrt() - t;
        acc += d * d;
    }
    acc.sqrt()
}

/// Reconstructs a waveform whose STFT magnitude approximates `magnitude`
/// by alternating projections. Initial phases are drawn from a fixed seed.
pub fn griffin_lim(magnitude: &Matrix, n_iters: usize, cfg: &FrameConfig, sample_rate_hz: u32) -> Result<GriffinLimRun> {
    cfg.validate()?;
    if n_iters == 0 {
        return Err(Error::config("griffin-lim needs at least one iteration"));
    }
    if magnitude.cols() != cfg.n_bins() || magnitude.rows() == 0 {
        return Err(Error::shape(
            "griffin_lim",
            alloc::format!("magnitude is {}x{}, expected Tx{}", magnitude.rows(), magnitude.cols(), cfg.n_bins()),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(PHASE_SEED);
    let mut spec = ComplexSpectrogram {
        re: Matrix::zeros(magnitude.rows(), magnitude.cols()),
        im: Matrix::zeros(magnitude.rows(), magnitude.cols()),
    };
    for (idx, &m) in magnitude.as_slice().iter().enumerate() {
        let phase = rng.random::<f64>() * 2.0 * core::f64::consts::PI;
        spec.re.as_mut_slice()[idx] = m * phase.cos();
        spec.im.as_mut_slice()[idx] = m * phase.sin();
    }
    let mut signal = istft(&spec, cfg)?;
    let mut distances = Vec::with_capacity(n_iters + 1);
    let mut analysis = stft_samples(&signal, cfg)?;
    distances.push(magnitude_distance(magnitude, &analysis));
    for _ in 0..n_iters {
        for (idx, &m) in magnitude.as_slice().iter().enumerate() {
            let r = analysis.re.as_slice()[idx];
            let i = analysis.im.as_slice()[idx];
            let norm = (r * r + i * i).sqrt();
            let (c, s) = if norm > 1e-12 { (r / norm, i / norm) } else { (1.0, 0.0) };
            spec.re.as_mut_slice()[idx] = m * c;
            spec.im.as_mut_slice()[idx] = m * s;
        }
        signal = istft(&spec, cfg)?;
        analysis = stft_samples(&signal, cfg)?;
        distances.push(magnitude_distance(magnitude, &analysis));
    }
    let peak = signal.iter().fold(0.0f64, |p, v| p.max(v.abs()));
    if peak > 1.0 {
        signal.iter_mut().for_each(|v| *v /= peak);
    }
    Ok(GriffinLimRun { waveform: Waveform::from_clamped(signal, sample_rate_hz)?, distances })
}

/// Griffin-Lim on a log-mel spectrogram: energies are mapped back to linear
/// magnitudes with the filterbank pseudo-inverse, clamped at zero.
pub fn griffin_lim_from_mel(mel: &MelSpectrogram, n_iters: usize, sample_rate_hz: u32) -> Result<GriffinLimRun> {
    let cfg = mel.config();
    let fb = mel_filterbank(cfg, sample_rate_hz)?;
    let pinv = pinv_rows(&fb)?;
    let mut energies = mel.frames().clone();
    energies.as_mut_slice().iter_mut().for_each(|v| *v = v.exp());
    let mut mag = energies.matmul(&pinv.transpose())?;
    mag.as_mut_slice().iter_mut().for_each(|v| *v = v.max(0.0));
    griffin_lim(&mag, n_iters, &cfg.frame, sample_rate_hz)
}
