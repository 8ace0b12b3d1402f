//! Objective evaluation: pitch error rates, equal error rate and an
//! embedding classifier.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
#[allow(unused_imports)] // shadowed by inherent methods when std is linked
use num_traits::Float;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Adam, AdamConfig, Graph, ParamStore, Tensor};
use crate::error::{Error, Result};
use crate::nn::Linear;
use crate::yin::PitchContour;

/// Relative deviation above which a mutually voiced frame is a gross error.
pub const DEFAULT_GROSS_THRESHOLD: f64 = 0.2;

/// A ratio together with the counts it came from.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Fraction {
    pub numerator: usize,
    pub denominator: usize,
}

impl Fraction {
    /// Value of the ratio; 0 when the denominator is 0.
    pub fn value(&self) -> f64 {
        if self.denominator == 0 {
            0.0
        } else {
            self.numerator as f64 / self.denominator as f64
        }
    }

    /// True when the ratio is taken over an empty set.
    pub fn zero_support(&self) -> bool {
        self.denominator == 0
    }
}

/// Per-frame error counts behind GPE, VDE and FFE. Counts from several
/// contour pairs can be pooled with [`PitchErrorCounts::merge`].
#[derive(Debug, Clone, Copy, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PitchErrorCounts {
    pub frames: usize,
    pub voicing_mismatches: usize,
    pub mutually_voiced: usize,
    pub gross_errors: usize,
}

impl PitchErrorCounts {
    pub fn gpe(&self) -> Fraction {
        Fraction { numerator: self.gross_errors, denominator: self.mutually_voiced }
    }

    pub fn vde(&self) -> Fraction {
        Fraction { numerator: self.voicing_mismatches, denominator: self.frames }
    }

    pub fn ffe(&self) -> Fraction {
        Fraction { numerator: self.voicing_mismatches + self.gross_errors, denominator: self.frames }
    }

    pub fn merge(&self, other: &PitchErrorCounts) -> PitchErrorCounts {
        PitchErrorCounts {
            frames: self.frames + other.frames,
            voicing_mismatches: self.voicing_mismatches + other.voicing_mismatches,
            mutually_voiced: self.mutually_voiced + other.mutually_voiced,
            gross_errors: self.gross_errors + other.gross_errors,
        }
    }
}

fn check_lengths(reference: &PitchContour, estimate: &PitchContour) -> Result<()> {
    if reference.len() != estimate.len() {
        return Err(Error::shape("pitch metrics", format!("{} reference frames vs {} estimated", reference.len(), estimate.len())));
    }
    Ok(())
}

pub fn pitch_error_counts(reference: &PitchContour, estimate: &PitchContour, rel_threshold: f64) -> Result<PitchErrorCounts> {
    check_lengths(reference, estimate)?;
    let mut c = PitchErrorCounts { frames: reference.len(), ..Default::default() };
    for i in 0..reference.len() {
        let (rv, ev) = (reference.voiced()[i], estimate.voiced()[i]);
        if rv != ev {
            c.voicing_mismatches += 1;
        } else if rv {
            c.mutually_voiced += 1;
            let (r, e) = (reference.f0_hz()[i], estimate.f0_hz()[i]);
            if (e - r).abs() > rel_threshold * r {
                c.gross_errors += 1;
            }
        }
    }
    Ok(c)
}

/// Gross pitch error over frames voiced in both contours.
pub fn gpe(reference: &PitchContour, estimate: &PitchContour, rel_threshold: f64) -> Result<Fraction> {
    Ok(pitch_error_counts(reference, estimate, rel_threshold)?.gpe())
}

/// Voicing decision error over all frames.
pub fn vde(reference: &PitchContour, estimate: &PitchContour) -> Result<Fraction> {
    Ok(pitch_error_counts(reference, estimate, DEFAULT_GROSS_THRESHOLD)?.vde())
}

/// F0 frame error: voicing mismatches plus gross errors, over all frames.
pub fn ffe(reference: &PitchContour, estimate: &PitchContour, rel_threshold: f64) -> Result<Fraction> {
    Ok(pitch_error_counts(reference, estimate, rel_threshold)?.ffe())
}

/// Pearson correlation of f0 over mutually voiced frames, with the frame count.
pub fn pitch_correlation(a: &PitchContour, b: &PitchContour) -> Result<(f64, usize)> {
    check_lengths(a, b)?;
    let pairs: Vec<(f64, f64)> =
        (0..a.len()).filter(|&i| a.voiced()[i] && b.voiced()[i]).map(|i| (a.f0_hz()[i], b.f0_hz()[i])).collect();
    if pairs.len() < 2 {
        return Err(Error::invalid(format!("correlation needs 2 mutually voiced frames, got {}", pairs.len())));
    }
    Ok((pearson(&pairs), pairs.len()))
}

/// Pearson correlation; 0 when either side has no variance.
pub fn pearson(pairs: &[(f64, f64)]) -> f64 {
    let n = pairs.len() as f64;
    let (mx, my) = (pairs.iter().map(|p| p.0).sum::<f64>() / n, pairs.iter().map(|p| p.1).sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for &(x, y) in pairs {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        0.0
    } else {
        sxy / (sxx * syy).sqrt()
    }
}

/// Verification trial scores.
#[derive(Debug, Clone, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ScoreSet {
    pub genuine_scores: Vec<f64>,
    pub impostor_scores: Vec<f64>,
}

/// Equal error rate by sweeping the acceptance threshold (accept when
/// score ≥ t) over every distinct score plus +∞, and interpolating linearly
/// between the two thresholds where FAR − FRR changes sign.
pub fn eer(scores: &ScoreSet) -> Result<f64> {
    let (gen, imp) = (&scores.genuine_scores, &scores.impostor_scores);
    if gen.is_empty() || imp.is_empty() {
        return Err(Error::Empty("genuine or impostor scores"));
    }
    if gen.iter().chain(imp).any(|s| !s.is_finite()) {
        return Err(Error::invalid("scores must be finite"));
    }
    let mut pooled: Vec<(f64, bool)> = gen.iter().map(|&s| (s, true)).chain(imp.iter().map(|&s| (s, false))).collect();
    pooled.sort_by(|a, b| a.0.total_cmp(&b.0));
    let (ng, ni) = (gen.len() as f64, imp.len() as f64);
    // Walking thresholds upward: everything below t is rejected.
    let (mut gen_below, mut imp_below) = (0usize, 0usize);
    let mut prev: Option<(f64, f64)> = None;
    let mut i = 0;
    loop {
        let far = 1.0 - imp_below as f64 / ni;
        let frr = gen_below as f64 / ng;
        if let Some(e) = crossing(prev, (far, frr)) {
            return Ok(e);
        }
        prev = Some((far, frr));
        if i == pooled.len() {
            break;
        }
        let t = pooled[i].0;
        while i < pooled.len() && pooled[i].0 == t {
            if pooled[i].1 {
                gen_below += 1;
            } else {
                imp_below += 1;
            }
            i += 1;
        }
    }
    // Unreachable: the last point has FAR = 0 and FRR = 1.
    Err(Error::invalid("no FAR/FRR crossing"))
}

/// EER point between two consecutive (FAR, FRR) operating points, if the
/// sign of FAR − FRR changes between them (or is zero at the second).
pub(crate) fn crossing(prev: Option<(f64, f64)>, cur: (f64, f64)) -> Option<f64> {
    let d1 = cur.0 - cur.1;
    match prev {
        None if d1 <= 0.0 => Some(cur.0),
        None => None,
        Some((far0, frr0)) => {
            let d0 = far0 - frr0;
            if d1 > 0.0 {
                return None;
            }
            if d0 == d1 {
                return Some(cur.0);
            }
            let lambda = d0 / (d0 - d1);
            Some(far0 + lambda * (cur.0 - far0))
        }
    }
}

/// Two-layer perceptron over embeddings: tanh hidden layer, softmax output.
#[derive(Debug, Clone, PartialEq)]
pub struct Classifier {
    params: ParamStore,
    labels: Vec<u32>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ClassifierConfig {
    pub hidden: usize,
    pub epochs: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        ClassifierConfig { hidden: 32, epochs: 300, lr: 1e-2, seed: 0 }
    }
}

fn stack(embeddings: &[Vec<f64>]) -> Result<Tensor> {
    let dim = embeddings.first().map(|e| e.len()).ok_or(Error::Empty("embeddings"))?;
    if embeddings.iter().any(|e| e.len() != dim) {
        return Err(Error::shape("classifier", "embeddings differ in dimension"));
    }
    Tensor::matrix(embeddings.len(), dim, embeddings.concat())
}

impl Classifier {
    /// Randomly initialized classifier over the given label set.
    pub fn untrained(dim: usize, labels: &[u32], cfg: &ClassifierConfig) -> Result<Self> {
        let labels: Vec<u32> = labels.iter().copied().collect::<BTreeSet<_>>().into_iter().collect();
        if labels.len() < 2 {
            return Err(Error::invalid("classifier needs at least 2 classes"));
        }
        if dim == 0 || cfg.hidden == 0 {
            return Err(Error::config("classifier dims must be positive"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut params = ParamStore::new();
        Linear::init(&mut params, "hidden", dim, cfg.hidden, &mut rng)?;
        Linear::init(&mut params, "out", cfg.hidden, labels.len(), &mut rng)?;
        Ok(Classifier { params, labels })
    }

    /// Full-batch Adam on softmax cross-entropy.
    pub fn train(embeddings: &[Vec<f64>], labels: &[u32], cfg: &ClassifierConfig) -> Result<Self> {
        if embeddings.len() != labels.len() {
            return Err(Error::shape("classifier", format!("{} embeddings, {} labels", embeddings.len(), labels.len())));
        }
        let x = stack(embeddings)?;
        let mut clf = Classifier::untrained(x.cols(), labels, cfg)?;
        for &l in &clf.labels {
            if labels.iter().filter(|&&y| y == l).count() < 2 {
                return Err(Error::invalid(format!("class {} has fewer than 2 examples", l)));
            }
        }
        let k = clf.labels.len();
        let mut onehot = vec![0.0; labels.len() * k];
        for (i, y) in labels.iter().enumerate() {
            onehot[i * k + clf.labels.binary_search(y).expect("label present")] = 1.0;
        }
        let onehot = Tensor::matrix(labels.len(), k, onehot)?;
        let mut opt = Adam::new(AdamConfig::with_lr(cfg.lr), &clf.params)?;
        for _ in 0..cfg.epochs {
            let mut g = Graph::new();
            let b = clf.params.bind(&mut g)?;
            let xv = g.constant(x.clone())?;
            let logits = clf.forward(&mut g, &b, xv)?;
            let lp = g.log_softmax_rows(logits)?;
            let t = g.constant(onehot.clone())?;
            let picked = g.mul(lp, t)?;
            let s = g.sum(picked)?;
            let loss = g.scale(s, -1.0 / labels.len() as f64)?;
            g.backward(loss)?;
            let mut grads = clf.params.zeros_like();
            b.accumulate_grads(&g, &mut grads);
            opt.step(&mut clf.params, &grads, None)?;
        }
        Ok(clf)
    }

    fn forward(&self, g: &mut Graph, b: &crate::autodiff::Bound, x: crate::autodiff::Var) -> Result<crate::autodiff::Var> {
        let h = Linear::bind(b, "hidden")?.forward(g, x)?;
        let h = g.tanh(h)?;
        Linear::bind(b, "out")?.forward(g, h)
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    /// Predicted labels for a batch of embeddings.
    pub fn classify_batch(&self, embeddings: &[Vec<f64>]) -> Result<Vec<u32>> {
        let x = stack(embeddings)?;
        let mut g = Graph::new();
        let b = self.params.bind_with(&mut g, |_| false)?;
        let xv = g.constant(x)?;
        let logits = self.forward(&mut g, &b, xv)?;
        let out = g.value(logits);
        Ok((0..out.rows())
            .map(|r| {
                let row = out.row_slice(r);
                let best = (0..row.len()).fold(0, |bi, i| if row[i] > row[bi] { i } else { bi });
                self.labels[best]
            })
            .collect())
    }

    pub fn classify(&self, embedding: &[f64]) -> Result<u32> {
        Ok(self.classify_batch(&[embedding.to_vec()])?[0])
    }

    /// Fraction of embeddings whose predicted label matches.
    pub fn accuracy(&self, embeddings: &[Vec<f64>], labels: &[u32]) -> Result<f64> {
        if embeddings.len() != labels.len() {
            return Err(Error::shape("accuracy", "embedding and label counts differ"));
        }
        let pred = self.classify_batch(embeddings)?;
        Ok(pred.iter().zip(labels).filter(|(p, y)| p == y).count() as f64 / labels.len() as f64)
    }
}
