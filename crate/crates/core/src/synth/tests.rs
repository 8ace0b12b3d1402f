use super::train::batch_gradients;
use super::*;
use crate::corpus::{generate_corpus, CorpusSpec, StyleClass};
use crate::speaker::{SpeakerEncoder, SpeakerEncoderConfig};

fn tiny_config() -> SynthConfig {
    let mel = MelConfig { n_mels: 6, ..MelConfig::synth() };
    SynthConfig {
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
        ..Default::default()
    }
}

fn random_utterance(seed: u64, cfg: &SynthConfig, frames: usize, symbols: usize) -> PreparedUtterance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ids: Vec<u8> = (0..symbols).map(|_| rng.random_range(0..ALPHABET_SIZE as u8)).collect();
    let mel: Vec<f64> = (0..frames * cfg.mel.n_mels).map(|_| rng.random_range(-8.0..0.0)).collect();
    let f0: Vec<f64> = (0..frames).map(|i| if i % 4 == 3 { 0.0 } else { rng.random_range(90.0..250.0) }).collect();
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

fn style(cfg: &SynthConfig, seed: u64) -> StyleEmbedding {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    StyleEmbedding::new((0..cfg.gst.style_dim).map(|_| rng.random_range(-0.5..0.5)).collect()).unwrap()
}

fn uniform_rhythm(t_dec: usize, t_enc: usize) -> Rhythm {
    Rhythm::new(Matrix::filled(t_dec, t_enc, 1.0 / t_enc as f64)).unwrap()
}

#[test]
fn parameter_groups_partition_the_model() {
    for cfg in [SynthConfig::default(), tiny_config()] {
        let m = Synthesizer::new(cfg, 0).unwrap();
        let mut enc = 0;
        let mut dec = 0;
        for n in m.params().names() {
            match param_group(n).unwrap() {
                ParamGroup::Encoder => enc += 1,
                ParamGroup::Decoder => dec += 1,
            }
        }
        assert_eq!(enc + dec, m.params().len());
        assert!(enc > 0 && dec > 0);
        assert!(m.params().names().iter().any(|n| n.starts_with("gst.")));
    }
    assert!(param_group("other.w").is_err());
}

#[test]
fn config_validation() {
    assert!(SynthConfig::default().validate().is_ok());
    assert!(SynthConfig::paper().validate().is_ok());
    assert!(SynthConfig { decoder_dim: 0, ..Default::default() }.validate().is_err());
    assert!(SynthConfig { prenet_dropout: 1.0, ..Default::default() }.validate().is_err());
    let mut c = SynthConfig::default();
    c.gst.n_mels = 40;
    assert!(c.validate().is_err());
}

#[test]
fn rhythm_validation_and_statistics() {
    assert!(Rhythm::new(Matrix::from_rows(&[vec![0.5, 0.6]]).unwrap()).is_err());
    assert!(Rhythm::new(Matrix::from_rows(&[vec![1.5, -0.5]]).unwrap()).is_err());
    assert!(Rhythm::new(Matrix::zeros(0, 0)).is_err());
    let r = Rhythm::new(Matrix::from_rows(&[vec![1.0, 0.0, 0.0], vec![0.6, 0.4, 0.0], vec![0.0, 0.9, 0.1], vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]]).unwrap()).unwrap();
    let c = r.centers_of_mass();
    assert!((c[0] - 0.0).abs() < 1e-12 && (c[1] - 0.4).abs() < 1e-12 && (c[2] - 1.1).abs() < 1e-12);
    // 1.1 -> 1.0 moves backwards once out of four transitions.
    assert!((r.monotonic_fraction() - 0.75).abs() < 1e-12);
    assert_eq!(r.hard_durations(), vec![2, 2, 1]);
}

#[test]
fn guide_matrix_matches_formula() {
    let m = guide_matrix(4, 2);
    for t in 0..4 {
        for j in 0..2 {
            let d = (j as f64 + 0.5) / 2.0 - (t as f64 + 0.5) / 4.0;
            let want = 1.0 - (-d * d / (2.0 * 0.04)).exp();
            assert!((m.get(t, j) - want).abs() < 1e-15);
        }
    }
}

#[test]
fn f0_features_encode_voicing() {
    let cfg = SynthConfig::default();
    let c = PitchContour::new(vec![150.0, 0.0, 300.0], vec![true, false, true], 256, 22050).unwrap();
    let f = f0_features(&c, &cfg).unwrap();
    assert_eq!(f.cols(), 2 + cfg.mel.n_mels);
    assert_eq!(&f.row_slice(0)[..2], &[0.0, 1.0]);
    assert!(f.row_slice(1).iter().all(|&v| v == 0.0));
    assert!((f.get(2, 0) - 2.0f64.ln() / 0.5).abs() < 1e-12);
    let off = SynthConfig { pitch_conditioning: false, ..cfg.clone() };
    assert!(f0_features(&c, &off).unwrap().data().iter().all(|&v| v == 0.0));
}

#[test]
fn harmonic_template_tracks_f0() {
    let cfg = SynthConfig::default();
    let fb = crate::dsp::mel_filterbank(&cfg.mel, cfg.sample_rate_hz).unwrap();
    let centre = |c: usize| {
        let r = fb.row(c);
        r.iter().enumerate().map(|(k, w)| k as f64 * w).sum::<f64>() / r.iter().sum::<f64>() * 22050.0 / 1024.0
    };
    let c = PitchContour::from_f0(vec![200.0, 230.0], 256, 22050).unwrap();
    let f = f0_features(&c, &cfg).unwrap();
    let t0 = &f.row_slice(0)[2..];
    // Low channels peak on harmonics and dip between them.
    let nearest = |hz: f64| (0..cfg.mel.n_mels).min_by(|&a, &b| (centre(a) - hz).abs().total_cmp(&(centre(b) - hz).abs())).unwrap();
    let (on, off) = (nearest(400.0), nearest(500.0));
    assert!(t0[on] > 0.3 && t0[off] < -0.3, "{} {}", t0[on], t0[off]);
    // The top channels cannot resolve harmonics.
    assert!(t0[cfg.mel.n_mels - 1].abs() < 0.2, "{}", t0[cfg.mel.n_mels - 1]);
    assert_ne!(&f.row_slice(1)[2..], t0);
}

#[test]
fn supplied_rhythm_fixes_frame_count() {
    let cfg = tiny_config();
    let m = Synthesizer::new(cfg.clone(), 1).unwrap();
    let u = random_utterance(2, &cfg, 120, 7);
    let z = style(&cfg, 3);
    let c = Conditioning { symbols: &u.symbols, speaker: &u.speaker, f0: &u.f0, style: &z };
    let r = uniform_rhythm(120, 7);
    let (mel, used) = m.synthesize_with_alignment(&c, Some(&r), 0).unwrap();
    assert_eq!(mel.n_frames(), 120);
    assert_eq!(used.weights(), r.weights());
    assert!(m.synthesize(&c, Some(&uniform_rhythm(120, 6)), 0).is_err());
    assert!(m.synthesize(&c, Some(&uniform_rhythm(119, 7)), 0).is_err());
}

#[test]
fn decoder_steps_follow_f0_length() {
    let cfg = tiny_config();
    let m = Synthesizer::new(cfg.clone(), 1).unwrap();
    let z = style(&cfg, 3);
    for frames in [1, 9, 33] {
        let u = random_utterance(frames as u64, &cfg, frames, 5);
        let c = Conditioning { symbols: &u.symbols, speaker: &u.speaker, f0: &u.f0, style: &z };
        let (mel, r) = m.synthesize_with_alignment(&c, None, 4).unwrap();
        assert_eq!(mel.n_frames(), frames);
        assert_eq!((r.decoder_steps(), r.encoder_steps()), (frames, 5));
    }
}

#[test]
fn baseline_ignores_f0_values() {
    let cfg = SynthConfig { pitch_conditioning: false, ..tiny_config() };
    let m = Synthesizer::new(cfg.clone(), 5).unwrap();
    let u = random_utterance(6, &cfg, 20, 6);
    let z = style(&cfg, 3);
    let perturbed = PitchContour::from_f0(u.f0.f0_hz().iter().map(|f| if *f > 0.0 { f * 1.7 } else { 200.0 }).collect(), 256, 22050).unwrap();
    let a = m.synthesize(&Conditioning { symbols: &u.symbols, speaker: &u.speaker, f0: &u.f0, style: &z }, None, 9).unwrap();
    let b = m.synthesize(&Conditioning { symbols: &u.symbols, speaker: &u.speaker, f0: &perturbed, style: &z }, None, 9).unwrap();
    assert_eq!(a.frames().as_slice(), b.frames().as_slice());

    let on = Synthesizer::new(SynthConfig { pitch_conditioning: true, ..cfg }, 5).unwrap();
    let a = on.synthesize(&Conditioning { symbols: &u.symbols, speaker: &u.speaker, f0: &u.f0, style: &z }, None, 9).unwrap();
    let b = on.synthesize(&Conditioning { symbols: &u.symbols, speaker: &u.speaker, f0: &perturbed, style: &z }, None, 9).unwrap();
    assert_ne!(a.frames().as_slice(), b.frames().as_slice());
}

#[test]
fn forced_alignment_shape_and_rows() {
    let cfg = tiny_config();
    let m = Synthesizer::new(cfg.clone(), 1).unwrap();
    let u = random_utterance(7, &cfg, 25, 6);
    let z = style(&cfg, 3);
    // A contour of a different length is resampled to the mel frame count.
    let f0 = u.f0.resample_nearest(40);
    let c = Conditioning { symbols: &u.symbols, speaker: &u.speaker, f0: &f0, style: &z };
    let r = m.forced_align(&c, &u.mel, 0).unwrap();
    assert_eq!((r.decoder_steps(), r.encoder_steps()), (25, 6));
    for row in r.weights().iter_rows() {
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }
    let wrong = MelSpectrogram::new(Matrix::filled(3, 80, -1.0), MelConfig::synth()).unwrap();
    assert!(m.forced_align(&c, &wrong, 0).is_err());
}

#[test]
fn conditioning_checks() {
    let cfg = tiny_config();
    let m = Synthesizer::new(cfg.clone(), 1).unwrap();
    let u = random_utterance(7, &cfg, 10, 4);
    let z = style(&cfg, 3);
    let bad_s = SpeakerEmbedding::normalized(vec![1.0; 5]).unwrap();
    assert!(m.synthesize(&Conditioning { symbols: &u.symbols, speaker: &bad_s, f0: &u.f0, style: &z }, None, 0).is_err());
    let bad_z = StyleEmbedding::new(vec![0.0; 7]).unwrap();
    assert!(m.synthesize(&Conditioning { symbols: &u.symbols, speaker: &u.speaker, f0: &u.f0, style: &bad_z }, None, 0).is_err());
    let long = PitchContour::from_f0(vec![100.0; 1001], 256, 22050).unwrap();
    assert!(m.synthesize(&Conditioning { symbols: &u.symbols, speaker: &u.speaker, f0: &long, style: &z }, None, 0).is_err());
}

#[test]
fn micro_batch_gradient_check() {
    let cfg = tiny_config();
    let m = Synthesizer::new(cfg.clone(), 21).unwrap();
    let batch = [random_utterance(31, &cfg, 7, 4), random_utterance(32, &cfg, 5, 3)];
    let err = loss_gradient_error(&m, &batch, 1.0, 0.05, 22, 1e-6).unwrap();
    assert!(err < 1e-3, "max relative error {}", err);
    assert!(loss_gradient_error(&m, &[], 1.0, 0.05, 22, 1e-6).is_err());
}

#[test]
fn batch_gradients_average_per_utterance_graphs() {
    let cfg = tiny_config();
    let params = init_params(&cfg, 2).unwrap();
    let a = random_utterance(41, &cfg, 6, 3);
    let b = random_utterance(42, &cfg, 8, 5);
    let (both, mse) = batch_gradients(&params, &cfg, &[&a, &b], 0.5, 9, &|_| true).unwrap();
    let (ga, ma) = batch_gradients(&params, &cfg, &[&a], 0.5, 9, &|_| true).unwrap();
    assert!((mse - ma / 2.0).abs() > 0.0);
    assert!(both.iter().zip(&ga).any(|(x, y)| x.data() != y.data()));
    let (frozen, _) = batch_gradients(&params, &cfg, &[&a], 0.5, 9, &|n| n.starts_with("dec.")).unwrap();
    for (n, t) in params.names().iter().zip(&frozen) {
        if n.starts_with("enc.") || n.starts_with("gst.") {
            assert!(t.data().iter().all(|&v| v == 0.0));
        }
    }
}

#[test]
fn training_is_deterministic_and_reduces_loss() {
    let cfg = tiny_config();
    let data: Vec<PreparedUtterance> = (0..4).map(|i| random_utterance(50 + i, &cfg, 10, 4)).collect();
    let tcfg = SynthTrainConfig { steps: 40, batch_size: 2, adam: crate::autodiff::AdamConfig::with_lr(1e-2), ..Default::default() };
    let (m1, r1) = train_prepared(&cfg, &tcfg, &data, &data[..1]).unwrap();
    let (m2, r2) = train_prepared(&cfg, &tcfg, &data, &data[..1]).unwrap();
    assert_eq!(r1.losses, r2.losses);
    assert_eq!(r1.val_loss.to_bits(), r2.val_loss.to_bits());
    assert_eq!(m1.params().tensors(), m2.params().tensors());
    assert!(r1.final_loss(5) < r1.initial_loss());
    assert!(train_prepared(&cfg, &tcfg, &[], &[]).is_err());
}

#[test]
fn empty_corpus_rejected() {
    let spec = CorpusSpec { n_speakers: 2, utterances_per_speaker: 2, held_out_speakers: 0, ..Default::default() };
    let mut corpus = generate_corpus(&spec).unwrap();
    corpus.utterances.clear();
    let enc = SpeakerEncoder::new(SpeakerEncoderConfig::default(), 0).unwrap();
    let err = train(&corpus, &enc, &SynthConfig::default(), &SynthTrainConfig { steps: 1, ..Default::default() }).unwrap_err();
    assert!(matches!(err, Error::Empty(_)));
    let narrow = SpeakerEncoder::new(SpeakerEncoderConfig { embedding_dim: 8, ..Default::default() }, 0).unwrap();
    assert!(train(&corpus, &narrow, &SynthConfig::default(), &SynthTrainConfig::default()).is_err());
}

#[test]
fn alphabet_mismatch_rejected() {
    let cfg = SynthConfig { n_symbols: 5, ..tiny_config() };
    let mut u = random_utterance(3, &cfg, 6, 3);
    u.symbols = SymbolSequence::new(vec![0, 9, 1]).unwrap();
    assert!(train_prepared(&cfg, &SynthTrainConfig { steps: 1, ..Default::default() }, &[u], &[]).is_err());
}

#[test]
fn decoder_adaptation_freezes_encoder_side() {
    let cfg = tiny_config();
    let base = Synthesizer::new(cfg.clone(), 3).unwrap();
    let samples: Vec<PreparedUtterance> = (0..3).map(|i| random_utterance(60 + i, &cfg, 8, 4)).collect();
    let acfg = AdaptConfig { iterations: 5, adam: crate::autodiff::AdamConfig::with_lr(1e-2), ..Default::default() };
    let dec = adapt(&base, &samples, &acfg).unwrap();
    let whole = adapt(&base, &samples, &AdaptConfig { mode: AdaptMode::Whole, ..acfg.clone() }).unwrap();
    let mut dec_changed = false;
    let mut enc_changed_whole = false;
    for (i, n) in base.params().names().iter().enumerate() {
        let before = base.params().tensors()[i].data();
        let d = dec.params().tensors()[i].data();
        let w = whole.params().tensors()[i].data();
        match param_group(n).unwrap() {
            ParamGroup::Encoder => {
                let same = before.iter().zip(d).all(|(a, b)| a.to_bits() == b.to_bits());
                assert!(same, "{} changed under decoder adaptation", n);
                enc_changed_whole |= before != w;
            }
            ParamGroup::Decoder => dec_changed |= before != d,
        }
    }
    assert!(dec_changed && enc_changed_whole);
    let none = adapt(&base, &samples, &AdaptConfig { iterations: 0, ..acfg.clone() }).unwrap();
    assert_eq!(none.params().tensors(), base.params().tensors());
    assert!(adapt(&base, &[], &acfg).is_err());
    let many: Vec<PreparedUtterance> = (0..21).map(|i| random_utterance(i, &cfg, 4, 2)).collect();
    assert!(adapt(&base, &many, &acfg).is_err());
}

#[test]
fn one_step_moves_the_token_bank() {
    let cfg = tiny_config();
    let data: Vec<PreparedUtterance> = (0..2).map(|i| random_utterance(70 + i, &cfg, 9, 4)).collect();
    let init = init_params(&cfg, 11).unwrap();
    let (grads, _) = batch_gradients(&init, &cfg, &[&data[0], &data[1]], 1.0, 0, &|_| true).unwrap();
    let i = init.index_of("gst.tokens").unwrap();
    assert!(grads[i].norm_sq() > 0.0);
    let (m, _) = train_prepared(&cfg, &SynthTrainConfig { steps: 1, batch_size: 2, ..Default::default() }, &data, &[]).unwrap();
    assert_ne!(m.params().get("gst.tokens").unwrap(), init.get("gst.tokens").unwrap());
}

#[test]
fn checkpoint_round_trip() {
    let cfg = tiny_config();
    let m = Synthesizer::new(cfg.clone(), 8).unwrap();
    let bytes = crate::autodiff::encode_checkpoint(&m.to_checkpoint("{}".into()));
    let back = Synthesizer::from_checkpoint(cfg.clone(), crate::autodiff::decode_checkpoint(&bytes).unwrap()).unwrap();
    assert_eq!(back.params().tensors(), m.params().tensors());
    assert!(Synthesizer::from_checkpoint(SynthConfig::default(), crate::autodiff::decode_checkpoint(&bytes).unwrap()).is_err());
    let gst = m.gst().unwrap();
    assert_eq!(gst.params().len(), m.params().names().iter().filter(|n| n.starts_with("gst.")).count());
}

