//! Iterative radix-2 complex FFT.

#[allow(unused_imports)] // shadowed by inherent methods when std is linked
use num_traits::Float;
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// Precomputed twiddles and bit-reversal permutation for one power-of-two size.
#[derive(Debug, Clone)]
pub struct Fft {
    n: usize,
    cos: Vec<f64>,
    sin: Vec<f64>,
    rev: Vec<usize>,
}

impl Fft {
    pub fn new(n: usize) -> Result<Self> {
        if n < 2 || !n.is_power_of_two() {
            return Err(Error::config(alloc::format!("fft size {} is not a power of two", n)));
        }
        let bits = n.trailing_zeros();
        let rev = (0..n).map(|i| i.reverse_bits() >> (usize::BITS - bits)).collect();
        let half = n / 2;
        let step = -2.0 * core::f64::consts::PI / n as f64;
        let cos = (0..half).map(|k| (step * k as f64).cos()).collect();
        let sin = (0..half).map(|k| (step * k as f64).sin()).collect();
        Ok(Fft { n, cos, sin, rev })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// In-place forward transform, `X_k = sum_n x_n e^{-2 pi i k n / N}`.
    pub fn forward(&self, re: &mut [f64], im: &mut [f64]) {
        self.transform(re, im, false);
    }

    /// In-place inverse transform including the `1/N` scale.
    pub fn inverse(&self, re: &mut [f64], im: &mut [f64]) {
        self.transform(re, im, true);
        let scale = 1.0 / self.n as f64;
        re.iter_mut().for_each(|v| *v *= scale);
        im.iter_mut().for_each(|v| *v *= scale);
    }

    fn transform(&self, re: &mut [f64], im: &mut [f64], inverse: bool) {
        let n = self.n;
        debug_assert!(re.len() == n && im.len() == n);
        for i in 0..n {
            let j = self.rev[i];
            if i < j {
                re.swap(i, j);
                im.swap(i, j);
            }
        }
        let sign = if inverse { -1.0 } else { 1.0 };
        let mut len = 2;
        while len <= n {
            let half = len / 2;
            let stride = n / len;
            for start in (0..n).step_by(len) {
                for k in 0..half {
                    let wr = self.cos[k * stride];
                    let wi = sign * self.sin[k * stride];
                    let a = start + k;
                    let b = a + half;
                    let tr = re[b] * wr - im[b] * wi;
                    let ti = re[b] * wi + im[b] * wr;
                    re[b] = re[a] - tr;
                    im[b] = im[a] - ti;
                    re[a] += tr;
                    im[a] += ti;
                }
            }
            len <<= 1;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn naive_dft(x: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let n = x.len();
        let mut re = vec![0.0; n];
        let mut im = vec![0.0; n];
        for k in 0..n {
            for (t, v) in x.iter().enumerate() {
                let ang = -2.0 * core::f64::consts::PI * (k * t) as f64 / n as f64;
                re[k] += v * ang.cos();
                im[k] += v * ang.sin();
            }
        }
        (re, im)
    }

    #[test]
    fn matches_direct_dft() {
        let x: Vec<f64> = (0..64).map(|i| ((i * 7 % 13) as f64 - 6.0) / 6.0).collect();
        let fft = Fft::new(64).unwrap();
        let mut re = x.clone();
        let mut im = vec![0.0; 64];
        fft.forward(&mut re, &mut im);
        let (dr, di) = naive_dft(&x);
        for k in 0..64 {
            assert!((re[k] - dr[k]).abs() < 1e-9);
            assert!((im[k] - di[k]).abs() < 1e-9);
        }
        fft.inverse(&mut re, &mut im);
        for k in 0..64 {
            assert!((re[k] - x[k]).abs() < 1e-12);
            assert!(im[k].abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_non_power_of_two() {
        assert!(Fft::new(1000).is_err());
        assert!(Fft::new(1).is_err());
    }
}
