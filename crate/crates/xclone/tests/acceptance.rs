//! End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
//! fails if any criterion fails. Trains every model once, so expect it to
//! take a while.

use std::path::PathBuf;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use xclone::config::{json_hash, ExperimentConfig, Preset};
use xclone::models::{self, SpeakerMeta};
use xclone::tasks::{self, Assets, CellOutcome, RunReport, SuiteConfig, Task, TaskManifest, Technique};
use xclone_core::autodiff::gradcheck::{primitive_count, primitive_suite};
use xclone_core::autodiff::{Graph, Tensor};
use xclone_core::corpus::{generate_corpus, Corpus, CorpusSpec, StyleClass, SymbolSequence, ALPHABET_SIZE};
use xclone_core::dsp::{MelConfig, MelSpectrogram, Waveform};
use xclone_core::gst::{GstConfig, StyleEmbedding, TokenBank};
use xclone_core::metrics::{self, pitch_error_counts, ScoreSet, DEFAULT_GROSS_THRESHOLD};
use xclone_core::speaker::{exclusive_centroids, ge2e_loss, SpeakerEmbedding, SpeakerEncoder};
use xclone_core::synth::{
    adapt, loss_gradient_error, param_group, prepare_utterances, AdaptConfig, AdaptMode, ParamGroup, PreparedUtterance,
    SynthConfig, SynthTrainConfig, SynthTrainReport, Synthesizer,
};
use xclone_core::yin::{extract_pitch, PitchContour, YinConfig};
use xclone_core::Matrix;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

struct Ledger {
    lines: Vec<(usize, &'static str, bool)>,
}

impl Ledger {
    fn record(&mut self, n: usize, name: &'static str, limit: Duration, started: Instant, o: Outcome) {
        let took = started.elapsed();
        let in_time = took <= limit;
        let pass = o.pass && in_time;
        println!(
            "criterion {} ({}): {} | {} | {:.1}s of {}s",
            n,
            name,
            if pass { "PASS" } else { "FAIL" },
            o.detail,
            took.as_secs_f64(),
            limit.as_secs()
        );
        self.lines.push((n, name, pass));
    }
}

fn minutes(m: u64) -> Duration {
    Duration::from_secs(60 * m)
}

// ---------------------------------------------------------------- criterion 1

fn random_prepared(seed: u64, cfg: &SynthConfig, frames: usize, symbols: usize) -> PreparedUtterance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ids: Vec<u8> = (0..symbols).map(|_| rng.random_range(0..ALPHABET_SIZE as u8)).collect();
    let mel: Vec<f64> = (0..frames * cfg.mel.n_mels).map(|_| rng.random_range(-8.0..0.0)).collect();
    let f0: Vec<f64> = (0..frames).map(|i| if i % 3 == 2 { 0.0 } else { rng.random_range(90.0..250.0) }).collect();
    let s: Vec<f64> = (0..cfg.speaker_dim).map(|_| rng.random_range(-1.0..1.0)).collect();
    PreparedUtterance {
        id: seed as usize,
        speaker_id: 0,
        style: StyleClass::Neutral,
        symbols: SymbolSequence::new(ids).unwrap(),
        mel: MelSpectrogram::new(Matrix::from_vec(frames, cfg.mel.n_mels, mel).unwrap(), cfg.mel).unwrap(),
        f0: PitchContour::from_f0(f0, 256, 22050).unwrap(),
        speaker: SpeakerEmbedding::normalized(s).unwrap(),
    }
}

fn criterion_autodiff() -> Outcome {
    let rounds = 8;
    let cases = primitive_suite(101, rounds, 1e-6).unwrap();
    let worst = cases.iter().fold(0.0f64, |m, c| m.max(c.max_relative_error));
    let worst_name = cases.iter().max_by(|a, b| a.max_relative_error.total_cmp(&b.max_relative_error)).unwrap().primitive.clone();
    assert_eq!(cases.len(), primitive_count() * rounds);

    let mel = MelConfig { n_mels: 6, ..MelConfig::synth() };
    let cfg = SynthConfig {
        embed_dim: 4,
        encoder_dim: 5,
        prenet_hidden: 6,
        prenet_out: 4,
        decoder_dim: 7,
        attention_dim: 5,
        output_hidden: 8,
        speaker_dim: 3,
        gst: GstConfig { n_tokens: 3, n_heads: 2, style_dim: 4, ref_channels: 3, ref_hidden: 4, n_mels: 6 },
        mel,
        ..SynthConfig::default()
    };
    let model = Synthesizer::new(cfg.clone(), 5).unwrap();
    let batch = [random_prepared(1, &cfg, 7, 4), random_prepared(2, &cfg, 6, 3)];
    let synth_err = loss_gradient_error(&model, &batch, 1.0, 0.05, 9, 1e-6).unwrap();
    outcome(
        cases.len() >= 100 && worst < 1e-4 && synth_err < 1e-3,
        format!("{} primitive cases, worst rel err {:.2e} ({}); synth loss rel err {:.2e}", cases.len(), worst, worst_name, synth_err),
    )
}

// ---------------------------------------------------------------- criterion 2

fn criterion_yin(corpus: &Corpus) -> Outcome {
    let yin = YinConfig::default();
    let mut pooled = metrics::PitchErrorCounts::default();
    for u in corpus.utterances.iter().step_by(3) {
        let est = extract_pitch(&u.waveform, &yin).unwrap();
        let truth = u.plan.frame_contour(&yin.frame, u.waveform.sample_rate_hz(), est.len());
        pooled = pooled.merge(&pitch_error_counts(&truth, &est, DEFAULT_GROSS_THRESHOLD).unwrap());
    }
    let samples: Vec<f64> = (0..22050).map(|i| 0.6 * (2.0 * std::f64::consts::PI * 220.0 * i as f64 / 22050.0).sin()).collect();
    let sine = extract_pitch(&Waveform::new(samples, 22050).unwrap(), &yin).unwrap();
    let sine_ok = sine.voiced().iter().all(|&v| v) && sine.f0_hz().iter().all(|f| (f - 220.0).abs() <= 1.0);
    let worst = sine.f0_hz().iter().fold(0.0f64, |m, f| m.max((f - 220.0).abs()));
    let (gpe, vde) = (pooled.gpe().value(), pooled.vde().value());
    outcome(
        gpe < 0.01 && vde < 0.10 && sine_ok,
        format!("GPE {:.4}, VDE {:.4} over {} frames; 220 Hz sine max dev {:.3} Hz", gpe, vde, pooled.frames, worst),
    )
}

// ---------------------------------------------------------------- criterion 3

fn random_contour(rng: &mut ChaCha8Rng, n: usize, near: Option<&PitchContour>) -> PitchContour {
    let f0: Vec<f64> = (0..n)
        .map(|i| {
            if rng.random_bool(0.3) {
                return 0.0;
            }
            match near {
                Some(r) if r.voiced()[i] && rng.random_bool(0.7) => r.f0_hz()[i] * rng.random_range(0.6..1.4),
                _ => rng.random_range(70.0..400.0),
            }
        })
        .collect();
    PitchContour::from_f0(f0, 256, 22050).unwrap()
}

/// Per-frame brute force: (gross frames, mismatched frames, mutually voiced frames).
fn oracle_counts(r: &PitchContour, e: &PitchContour) -> (usize, usize, usize) {
    let labels: Vec<(bool, bool)> = r
        .f0_hz()
        .iter()
        .zip(e.f0_hz())
        .map(|(&rf, &ef)| {
            let both = rf > 0.0 && ef > 0.0;
            let mismatch = (rf > 0.0) != (ef > 0.0);
            let gross = both && (ef - rf).abs() > 0.2 * rf;
            (gross, mismatch)
        })
        .collect();
    let gross = labels.iter().filter(|l| l.0).count();
    let mismatch = labels.iter().filter(|l| l.1).count();
    let both = r.f0_hz().iter().zip(e.f0_hz()).filter(|(a, b)| **a > 0.0 && **b > 0.0).count();
    (gross, mismatch, both)
}

/// O(n²) threshold sweep: every candidate threshold recounts all scores.
fn oracle_eer(set: &ScoreSet) -> f64 {
    let mut thresholds: Vec<f64> = set.genuine_scores.iter().chain(&set.impostor_scores).copied().collect();
    thresholds.sort_by(f64::total_cmp);
    thresholds.dedup();
    let mut points = vec![(1.0, 0.0)];
    for &t in &thresholds {
        // Threshold just above t: every score ≤ t is rejected.
        let far = set.impostor_scores.iter().filter(|&&s| s > t).count() as f64 / set.impostor_scores.len() as f64;
        let frr = set.genuine_scores.iter().filter(|&&s| s <= t).count() as f64 / set.genuine_scores.len() as f64;
        points.push((far, frr));
    }
    for w in 0..points.len() {
        let (far1, frr1) = points[w];
        let d1 = far1 - frr1;
        if d1 > 0.0 {
            continue;
        }
        if w == 0 {
            return far1;
        }
        let (far0, frr0) = points[w - 1];
        let d0 = far0 - frr0;
        if d0 == d1 {
            return far1;
        }
        return far0 + d0 / (d0 - d1) * (far1 - far0);
    }
    unreachable!("the last point has FAR 0 and FRR 1")
}

fn criterion_metrics() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let mut mismatches = 0;
    let mut identity_failures = 0;
    for _ in 0..1000 {
        let n = rng.random_range(1..60);
        let r = random_contour(&mut rng, n, None);
        let e = random_contour(&mut rng, n, Some(&r));
        let (gross, mism, both) = oracle_counts(&r, &e);
        let gpe = metrics::gpe(&r, &e, 0.2).unwrap();
        let vde = metrics::vde(&r, &e).unwrap();
        let ffe = metrics::ffe(&r, &e, 0.2).unwrap();
        let want_gpe = if both == 0 { 0.0 } else { gross as f64 / both as f64 };
        if gpe.value() != want_gpe || vde.value() != mism as f64 / n as f64 || ffe.value() != (gross + mism) as f64 / n as f64 {
            mismatches += 1;
        }
        if ffe.numerator != vde.numerator + gpe.numerator || ffe.denominator != vde.denominator {
            identity_failures += 1;
        }
    }
    let mut eer_worst = 0.0f64;
    for k in 0..100 {
        let ng = rng.random_range(1..40);
        let ni = rng.random_range(1..40);
        // Every third set is quantized so that ties occur.
        let draw = |rng: &mut ChaCha8Rng, mu: f64| {
            let v: f64 = mu + rng.random_range(-1.0..1.0);
            if k % 3 == 0 {
                (v * 10.0).round() / 10.0
            } else {
                v
            }
        };
        let set = ScoreSet {
            genuine_scores: (0..ng).map(|_| draw(&mut rng, 0.5)).collect(),
            impostor_scores: (0..ni).map(|_| draw(&mut rng, 0.0)).collect(),
        };
        eer_worst = eer_worst.max((metrics::eer(&set).unwrap() - oracle_eer(&set)).abs());
    }
    outcome(
        mismatches == 0 && identity_failures == 0 && eer_worst <= 1e-9,
        format!("1000 contour pairs: {} oracle mismatches, {} FFE identity failures; 100 score sets: max EER diff {:.1e}", mismatches, identity_failures, eer_worst),
    )
}

// ---------------------------------------------------------------- criterion 4

fn ge2e_value(rows: &[Vec<f64>], n: usize, m: usize, w: f64, b: f64) -> f64 {
    let mut g = Graph::new();
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    let emb = g.constant(Tensor::matrix(n * m, rows[0].len(), flat).unwrap()).unwrap();
    let wv = g.constant(Tensor::scalar(w)).unwrap();
    let bv = g.constant(Tensor::scalar(b)).unwrap();
    let l = ge2e_loss(&mut g, emb, n, m, wv, bv).unwrap();
    g.value(l).item().unwrap()
}

fn cos(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

/// Scalar softmax GE2E: loops over every (utterance, speaker) similarity.
fn ge2e_oracle(rows: &[Vec<f64>], n: usize, m: usize, w: f64, b: f64) -> f64 {
    let d = rows[0].len();
    let centroid = |j: usize, skip: Option<usize>| -> Vec<f64> {
        let mut c = vec![0.0; d];
        let mut count = 0.0;
        for i in 0..m {
            if Some(i) == skip {
                continue;
            }
            for (k, v) in rows[j * m + i].iter().enumerate() {
                c[k] += v;
            }
            count += 1.0;
        }
        c.iter().map(|v| v / count).collect()
    };
    let mut total = 0.0;
    for j in 0..n {
        for i in 0..m {
            let e = &rows[j * m + i];
            let sims: Vec<f64> = (0..n).map(|k| w * cos(e, &centroid(k, if k == j { Some(i) } else { None })) + b).collect();
            let lse = sims.iter().map(|s| s.exp()).sum::<f64>().ln();
            total += lse - sims[j];
        }
    }
    total
}

fn own_centroid_gradient_max() -> f64 {
    let (n, m, d) = (3, 4, 5);
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let data: Vec<f64> = (0..n * m * d).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mut worst = 0.0f64;
    for r in 0..n * m {
        let mut g = Graph::new();
        let emb = g.param(Tensor::matrix(n * m, d, data.clone()).unwrap()).unwrap();
        let c = exclusive_centroids(&mut g, emb, n, m).unwrap();
        let row = g.slice(c, r..r + 1, 0..d).unwrap();
        let wts = g.constant(Tensor::matrix(1, d, (0..d).map(|k| 1.0 + k as f64).collect()).unwrap()).unwrap();
        let p = g.mul(row, wts).unwrap();
        let s = g.sum(p).unwrap();
        g.backward(s).unwrap();
        let grad = g.grad(emb).unwrap();
        worst = worst.max(grad.data()[r * d..(r + 1) * d].iter().fold(0.0f64, |a, v| a.max(v.abs())));
    }
    worst
}

fn criterion_speaker(report: &xclone_core::speaker::SpeakerTrainReport, n_speakers: usize) -> Outcome {
    // Orthogonal across speakers, identical within: the hand-built case.
    let hand = vec![vec![1.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0], vec![0.0, 1.0]];
    // By hand: own cosine 1, other cosine 0, so each row costs ln(e^(w+b) + e^b) - (w+b).
    let by_hand = 4.0 * ((5.0f64).exp() + (-5.0f64).exp()).ln() - 4.0 * 5.0;
    let hand_diff = (ge2e_value(&hand, 2, 2, 10.0, -5.0) - by_hand).abs().max((ge2e_oracle(&hand, 2, 2, 10.0, -5.0) - by_hand).abs());
    let mut rng = ChaCha8Rng::seed_from_u64(405);
    let mut rand_diff = 0.0f64;
    for _ in 0..20 {
        let (n, m, d) = (rng.random_range(2..5), rng.random_range(2..5), rng.random_range(2..6));
        let rows: Vec<Vec<f64>> = (0..n * m).map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let (w, b) = (rng.random_range(1.0..12.0), rng.random_range(-6.0..0.0));
        let a = ge2e_value(&rows, n, m, w, b);
        rand_diff = rand_diff.max((a - ge2e_oracle(&rows, n, m, w, b)).abs() / a.abs().max(1.0));
    }
    let own_grad = own_centroid_gradient_max();
    outcome(
        n_speakers == 8 && report.eer_trained < 0.05 && (report.eer_untrained - 0.5).abs() <= 0.15 && hand_diff < 1e-9 && rand_diff < 1e-9 && own_grad == 0.0,
        format!(
            "{} speakers: held-out EER {:.4} (untrained {:.4}); GE2E vs hand {:.1e}, vs oracle {:.1e}; own-centroid grad max {:e}",
            n_speakers, report.eer_trained, report.eer_untrained, hand_diff, rand_diff, own_grad
        ),
    )
}

// ---------------------------------------------------------------- criterion 5

fn mean_pair_cosine(a: &[StyleEmbedding], b: &[StyleEmbedding], same: bool) -> f64 {
    let mut sum = 0.0;
    let mut count = 0.0;
    for (i, x) in a.iter().enumerate() {
        for (j, y) in b.iter().enumerate() {
            if same && j <= i {
                continue;
            }
            sum += x.cosine(y);
            count += 1.0;
        }
    }
    sum / count
}

fn criterion_gst(model: &Synthesizer, val: &[PreparedUtterance]) -> Outcome {
    let bank = TokenBank::from_params(model.params(), model.config().gst.n_heads).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(505);
    let mut row_err = 0.0f64;
    for _ in 0..200 {
        let q: Vec<f64> = (0..bank.query_dim()).map(|_| rng.random_range(-3.0..3.0)).collect();
        let w = bank.attention_weights(&q).unwrap();
        for h in 0..w.rows() {
            row_err = row_err.max((w.row(h).iter().sum::<f64>() - 1.0).abs());
        }
    }

    let d = 6;
    let rand_m = |rng: &mut ChaCha8Rng, r: usize, c: usize| Matrix::from_vec(r, c, (0..r * c).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
    let single = TokenBank::new(rand_m(&mut rng, 1, d), 2, rand_m(&mut rng, 4, d), vec![0.1; d], rand_m(&mut rng, d, d), rand_m(&mut rng, d, d)).unwrap();
    let value = single.projected_values().unwrap();
    let mut k1_exact = true;
    for _ in 0..20 {
        let q: Vec<f64> = (0..4).map(|_| rng.random_range(-5.0..5.0)).collect();
        k1_exact &= single.attend(&q).unwrap().as_slice() == value.row(0);
        k1_exact &= single.attention_weights(&q).unwrap().as_slice().iter().all(|&w| w == 1.0);
    }

    let gst = model.gst().unwrap();
    let z = |style: StyleClass| -> Vec<StyleEmbedding> { val.iter().filter(|u| u.style == style).map(|u| gst.style_embedding(&u.mel).unwrap()).collect() };
    let (neutral, expressive) = (z(StyleClass::Neutral), z(StyleClass::Expressive));
    let intra = (mean_pair_cosine(&neutral, &neutral, true) + mean_pair_cosine(&expressive, &expressive, true)) / 2.0;
    let inter = mean_pair_cosine(&neutral, &expressive, false);
    outcome(
        row_err <= 1e-9 && k1_exact && intra > inter,
        format!("max |row sum - 1| {:.1e}; K=1 exact: {}; z cosine intra-class {:.4} vs inter-class {:.4}", row_err, k1_exact, intra, inter),
    )
}

// ---------------------------------------------------------------- tasks

fn manifest(task: Task, technique: Technique, n: usize, seed: u64) -> TaskManifest {
    TaskManifest {
        task,
        technique,
        n_target_samples: n,
        corpus: PathBuf::from("corpus"),
        speaker_checkpoint: PathBuf::from("speaker.ck"),
        synth_checkpoint: PathBuf::from("synth.ck"),
        target_speaker: None,
        seed,
        settings: None,
    }
}

fn run(assets: &Assets, cfg: &ExperimentConfig, task: Task, technique: Technique, n: usize) -> RunReport {
    tasks::run_task_with(assets, &manifest(task, technique, n, 7), &cfg.task).unwrap()
}

struct Trained {
    assets_on: Assets,
    assets_off: Assets,
    report_on: SynthTrainReport,
    report_off: SynthTrainReport,
}

fn criterion_synth(cfg: &ExperimentConfig, t: &Trained) -> Outcome {
    let on = run(&t.assets_on, cfg, Task::Imitation, Technique::ZeroShot, 10);
    let off = run(&t.assets_off, cfg, Task::Imitation, Technique::ZeroShot, 10);
    let (ffe_on, ffe_off) = (on.metrics.ffe.unwrap(), off.metrics.ffe.unwrap());
    let mse = on.metrics.mel_mse.unwrap();
    let val = t.report_on.val_loss;
    outcome(
        ffe_on < ffe_off && mse <= 2.0 * val,
        format!(
            "imitation FFE pitch-on {:.4} vs GST-only {:.4}; imitation MSE {:.4} vs 2 x val loss {:.4} (GST-only: MSE {:.4}, val {:.4})",
            ffe_on,
            ffe_off,
            mse,
            2.0 * val,
            off.metrics.mel_mse.unwrap(),
            t.report_off.val_loss
        ),
    )
}

fn criterion_transfer(cfg: &ExperimentConfig, t: &Trained) -> Outcome {
    let r = run(&t.assets_on, cfg, Task::StyleTransfer, Technique::ZeroShot, 10);
    let corr = r.metrics.pitch_correlation.unwrap_or(f64::NAN);
    let (to_target, to_source) = (r.metrics.speaker_cosine_target, r.metrics.speaker_cosine_style_source.unwrap());
    outcome(
        corr > 0.8 && to_target > to_source,
        format!("Pearson r {:.4} over {} items; speaker cosine to target {:.4} vs to style source {:.4}", corr, r.metrics.items.len(), to_target, to_source),
    )
}

fn encoder_bytes(m: &Synthesizer) -> Vec<u8> {
    m.params()
        .iter()
        .filter(|(n, _)| param_group(n).unwrap() == ParamGroup::Encoder)
        .flat_map(|(_, t)| t.data().iter().flat_map(|v| v.to_le_bytes()).collect::<Vec<u8>>())
        .collect()
}

fn criterion_adaptation(cfg: &ExperimentConfig, t: &Trained, corpus: &Corpus, encoder: &SpeakerEncoder) -> Outcome {
    let zero = run(&t.assets_on, cfg, Task::Imitation, Technique::ZeroShot, 10).metrics.speaker_cosine_target;
    let whole = run(&t.assets_on, cfg, Task::Imitation, Technique::AdaptWhole, 10).metrics.speaker_cosine_target;
    let decoder = run(&t.assets_on, cfg, Task::Imitation, Technique::AdaptDecoder, 10).metrics.speaker_cosine_target;

    let target = corpus.held_out[0];
    let samples: Vec<_> = corpus.utterances_of(target).take(5).collect();
    let prepared = prepare_utterances(samples, encoder, t.assets_on.synth.config()).unwrap();
    let adapted = adapt(&t.assets_on.synth, &prepared, &AdaptConfig { mode: AdaptMode::Decoder, iterations: 20, ..cfg.task.adapt.clone() }).unwrap();
    let frozen = encoder_bytes(&adapted) == encoder_bytes(&t.assets_on.synth);
    let moved = adapted.params().tensors() != t.assets_on.synth.params().tensors();

    let grid = [1usize, 5, 10, 20];
    let sweep: Vec<f64> = grid.iter().map(|&n| run(&t.assets_on, cfg, Task::Text, Technique::ZeroShot, n).metrics.speaker_cosine_target).collect();
    let rising = sweep.windows(2).filter(|w| w[1] >= w[0]).count();
    outcome(
        whole >= zero && decoder >= zero && frozen && moved && rising >= 2,
        format!(
            "imitation speaker cosine: zero-shot {:.4}, adapt_whole {:.4}, adapt_decoder {:.4}; decoder mode encoder unchanged: {}; zero-shot text cosine over {:?} samples {:?} ({} of 3 non-decreasing)",
            zero,
            whole,
            decoder,
            frozen,
            grid,
            sweep.iter().map(|c| (c * 1e4).round() / 1e4).collect::<Vec<_>>(),
            rising
        ),
    )
}

fn criterion_determinism(cfg: &ExperimentConfig, corpus: &Corpus, spk_meta: &SpeakerMeta, t: &Trained) -> Outcome {
    let mut checks: Vec<(&str, bool)> = Vec::new();
    let again = generate_corpus(&cfg.corpus).unwrap();
    checks.push(("corpus", models::corpus_hash(&again) == models::corpus_hash(corpus)));

    let short_spk = xclone_core::speaker::SpeakerTrainConfig { steps: 5, ..cfg.speaker_train.clone() };
    let (a, _, ra) = models::train_speaker(corpus, &cfg.speaker, &short_spk).unwrap();
    let (b, _, rb) = models::train_speaker(corpus, &cfg.speaker, &short_spk).unwrap();
    checks.push(("speaker training", a.params().tensors() == b.params().tensors() && ra.losses == rb.losses && ra.eer_trained.to_bits() == rb.eer_trained.to_bits()));

    let short_syn = SynthTrainConfig { steps: 4, ..cfg.synth_train.clone() };
    let (sa, _, xa) = models::train_synth(corpus, &t.assets_on.encoder, spk_meta, &cfg.synth, &short_syn).unwrap();
    let (sb, _, xb) = models::train_synth(corpus, &t.assets_on.encoder, spk_meta, &cfg.synth, &short_syn).unwrap();
    checks.push(("synth training", sa.params().tensors() == sb.params().tensors() && xa.losses == xb.losses));

    let m = manifest(Task::StyleTransfer, Technique::AdaptDecoder, 3, 11);
    let r1 = serde_json::to_vec(&tasks::run_task_with(&t.assets_on, &m, &cfg.task).unwrap()).unwrap();
    let r2 = serde_json::to_vec(&tasks::run_task_with(&t.assets_on, &m, &cfg.task).unwrap()).unwrap();
    checks.push(("task report", r1 == r2));

    let suite = SuiteConfig {
        corpus: PathBuf::from("corpus"),
        speaker_checkpoint: PathBuf::from("speaker.ck"),
        synth_checkpoint: PathBuf::from("synth.ck"),
        target_speaker: None,
        seed: 3,
        tasks: vec![Task::Imitation],
        techniques: vec![Technique::ZeroShot],
        sample_counts: vec![2],
        settings: None,
    };
    let report = tasks::run_suite_with(&t.assets_on, &suite, &cfg.task).unwrap();
    let embeds = report.config.settings.as_ref() == Some(&cfg.task) && report.config_hash == json_hash(&report.config);
    let replay = match &report.cells[0].outcome {
        CellOutcome::Ok(cell) => {
            // The embedded manifest alone reproduces the cell.
            let rerun = tasks::run_task_with(&t.assets_on, &cell.manifest, &xclone::TaskSettings { eval_utterances: 1, ..cfg.task.clone() }).unwrap();
            **cell == rerun
        }
        CellOutcome::Failed { .. } => false,
    };
    checks.push(("suite config embedded", embeds));
    checks.push(("suite cell replay", replay));

    let failed: Vec<&str> = checks.iter().filter(|c| !c.1).map(|c| c.0).collect();
    outcome(failed.is_empty(), if failed.is_empty() { format!("{} checks bit-identical", checks.len()) } else { format!("not reproducible: {:?}", failed) })
}

#[test]
fn acceptance() {
    let mut ledger = Ledger { lines: Vec::new() };
    let cfg = ExperimentConfig::preset(Preset::Desk);

    let t0 = Instant::now();
    ledger.record(1, "autodiff", minutes(1), t0, criterion_autodiff());

    let corpus = generate_corpus(&cfg.corpus).unwrap();
    let t0 = Instant::now();
    ledger.record(2, "yin", minutes(1), t0, criterion_yin(&corpus));

    let t0 = Instant::now();
    ledger.record(3, "metric oracles", minutes(1), t0, criterion_metrics());

    // The verification check uses its own 8-speaker corpus; the cloning
    // experiments below use the default, more diverse one.
    let t0 = Instant::now();
    let small = generate_corpus(&CorpusSpec { n_speakers: 8, utterances_per_speaker: 48, ..cfg.corpus.clone() }).unwrap();
    let (_, _, spk_report) = models::train_speaker(&small, &cfg.speaker, &cfg.speaker_train).unwrap();
    ledger.record(4, "speaker encoder", minutes(10), t0, criterion_speaker(&spk_report, small.spec.n_speakers));

    let t0 = Instant::now();
    let (encoder, spk_meta, _) = models::train_speaker(&corpus, &cfg.speaker, &cfg.speaker_train).unwrap();
    let spk_json = serde_json::to_string(&spk_meta).unwrap();
    let (on, on_meta, report_on) = models::train_synth(&corpus, &encoder, &spk_meta, &cfg.synth, &cfg.synth_train).unwrap();
    let off_cfg = SynthConfig { pitch_conditioning: false, ..cfg.synth.clone() };
    let (off, off_meta, report_off) = models::train_synth(&corpus, &encoder, &spk_meta, &off_cfg, &cfg.synth_train).unwrap();
    let trained = Trained {
        assets_on: Assets::new(corpus.clone(), encoder.clone(), spk_json.clone(), on, on_meta),
        assets_off: Assets::new(corpus.clone(), encoder.clone(), spk_json, off, off_meta),
        report_on,
        report_off,
    };
    let synth_started = t0;

    let t0 = Instant::now();
    let val = prepare_utterances(corpus.synth_val(), &encoder, &cfg.synth).unwrap();
    ledger.record(5, "gst", minutes(30), t0, criterion_gst(&trained.assets_on.synth, &val));

    ledger.record(6, "synthesizer pitch vs GST-only", minutes(30), synth_started, criterion_synth(&cfg, &trained));

    let t0 = Instant::now();
    ledger.record(7, "style transfer", minutes(5), t0, criterion_transfer(&cfg, &trained));

    let t0 = Instant::now();
    ledger.record(8, "adaptation vs zero-shot", minutes(15), t0, criterion_adaptation(&cfg, &trained, &corpus, &encoder));

    let t0 = Instant::now();
    ledger.record(9, "determinism", minutes(15), t0, criterion_determinism(&cfg, &corpus, &spk_meta, &trained));

    let failed: Vec<_> = ledger.lines.iter().filter(|l| !l.2).map(|l| (l.0, l.1)).collect();
    println!("acceptance: {} of {} criteria pass", ledger.lines.len() - failed.len(), ledger.lines.len());
    assert!(failed.is_empty(), "failed criteria: {:?}", failed);
}
