use alloc::format;
use alloc::vec::Vec;
#[allow(unused_imports)] // shadowed by inherent methods when std is linked
use num_traits::Float;

use super::params::ParamStore;
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Rescale the joint gradient to at most this L2 norm.
    pub clip_norm: Option<f64>,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8, clip_norm: None }
    }
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        AdamConfig { lr, ..AdamConfig::default() }
    }
}

/// Adam with bias correction. Moment buffers follow the parameter order of
/// the store it was created for.
#[derive(Debug, Clone)]
pub struct Adam {
    cfg: AdamConfig,
    t: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl Adam {
    pub fn new(cfg: AdamConfig, store: &ParamStore) -> Result<Self> {
        if !(cfg.lr > 0.0) || !(0.0..1.0).contains(&cfg.beta1) || !(0.0..1.0).contains(&cfg.beta2) || !(cfg.eps > 0.0) {
            return Err(Error::config(format!("invalid optimizer settings {:?}", cfg)));
        }
        Ok(Adam { cfg, t: 0, m: store.zeros_like(), v: store.zeros_like() })
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// Applies one update. Parameters whose `trainable` entry is false are left
    /// untouched, as are their moments.
    pub fn step(&mut self, store: &mut ParamStore, grads: &[Tensor], trainable: Option<&[bool]>) -> Result<()> {
        if grads.len() != store.len() || self.m.len() != store.len() {
            return Err(Error::shape("adam", format!("{} grads for {} params", grads.len(), store.len())));
        }
        let active = |i: usize| trainable.is_none_or(|t| t.get(i).copied().unwrap_or(false));
        let mut norm_sq = 0.0;
        for (i, (g, p)) in grads.iter().zip(store.tensors()).enumerate() {
            if g.shape() != p.shape() {
                return Err(Error::shape("adam", format!("grad {:?} for param {:?}", g.shape(), p.shape())));
            }
            if active(i) {
                if !g.is_finite() {
                    return Err(Error::Divergence(format!("non-finite gradient for {}", store.names()[i])));
                }
                norm_sq += g.norm_sq();
            }
        }
        let scale = match self.cfg.clip_norm {
            Some(c) if norm_sq.sqrt() > c => c / norm_sq.sqrt(),
            _ => 1.0,
        };
        self.t += 1;
        let AdamConfig { lr, beta1, beta2, eps, .. } = self.cfg;
        let bc1 = 1.0 - beta1.powi(self.t as i32);
        let bc2 = 1.0 - beta2.powi(self.t as i32);
        for (i, p) in store.tensors_mut().iter_mut().enumerate() {
            if !active(i) {
                continue;
            }
            let (m, v) = (self.m[i].data_mut(), self.v[i].data_mut());
            for (j, (x, &g)) in p.data_mut().iter_mut().zip(grads[i].data()).enumerate() {
                let g = g * scale;
                m[j] = beta1 * m[j] + (1.0 - beta1) * g;
                v[j] = beta2 * v[j] + (1.0 - beta2) * g * g;
                *x -= lr * (m[j] / bc1) / ((v[j] / bc2).sqrt() + eps);
            }
            if !p.is_finite() {
                return Err(Error::Divergence(format!("parameter {} became non-finite", store.names()[i])));
            }
        }
        Ok(())
    }
}
