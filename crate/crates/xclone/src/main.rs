use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;
use xclone::config::{ExperimentConfig, Preset};
use xclone::error::{CliError, Result};
use xclone::io;
use xclone::models;
use xclone::tasks::{self, SuiteConfig};
use xclone_core::corpus::{generate_corpus, SymbolSequence};
use xclone_core::dsp::{griffin_lim_from_mel, mel_spectrogram};
use xclone_core::gst::{Gst, StyleEmbedding};
use xclone_core::metrics::{eer, pitch_error_counts, Classifier, ClassifierConfig};
use xclone_core::speaker::{aggregate_embeddings, SpeakerEmbedding};
use xclone_core::synth::{adapt, prepare_utterance, prepare_utterances, AdaptMode, Conditioning, Rhythm};
use xclone_core::yin::{extract_pitch, scale_pitch_to_mean, YinConfig};

#[derive(Parser)]
#[command(name = "xclone", version, about = "Factorized expressive voice cloning on a synthetic corpus")]
struct Cli {
    /// Overrides every random seed in the configuration (and task manifests).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// JSON file applied on top of the preset.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value = "desk")]
    preset: Preset,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthetic corpus generation.
    #[command(subcommand)]
    Corpus(CorpusCmd),
    /// Pitch contour extraction and rescaling.
    #[command(subcommand)]
    Pitch(PitchCmd),
    /// Log-mel spectrogram of a WAV file.
    Mel(MelArgs),
    /// Speaker encoder training, embeddings and aggregation.
    #[command(subcommand)]
    Speaker(SpeakerCmd),
    /// Style embeddings from a reference mel.
    #[command(subcommand)]
    Gst(GstCmd),
    /// Synthesizer training, alignment, inference and adaptation.
    #[command(subcommand)]
    Synth(SynthCmd),
    /// Pitch, verification and classification metrics.
    #[command(subcommand)]
    Eval(EvalCmd),
    /// Cloning experiments from manifests and suites.
    #[command(subcommand)]
    Task(TaskCmd),
}

#[derive(Subcommand)]
enum CorpusCmd {
    /// Renders the corpus into a directory (corpus.json, wav/, plan/).
    Gen {
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
enum PitchCmd {
    Extract {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Harmonicity threshold (defaults to the configured value).
        #[arg(long)]
        threshold: Option<f64>,
    },
    /// Rescales voiced frames to a target mean f0.
    Scale {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        mean_hz: f64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum MelKind {
    /// 80 channels, as consumed by the synthesizer.
    Synth,
    /// 40 channels, as consumed by the speaker encoder.
    Speaker,
}

#[derive(Args)]
struct MelArgs {
    #[arg(long = "in")]
    input: PathBuf,
    /// `.csv` for text, anything else for the binary matrix format.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value = "synth")]
    kind: MelKind,
}

#[derive(Subcommand)]
enum SpeakerCmd {
    Train {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    Embed {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    Aggregate {
        #[arg(long = "in", num_args = 1.., required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
enum GstCmd {
    /// Style embedding of a mel file using a synthesizer checkpoint's tokens.
    Embed {
        #[arg(long)]
        mel: PathBuf,
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Whole,
    Decoder,
}

#[derive(Subcommand)]
enum SynthCmd {
    Train {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        speaker_ckpt: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Trains the style-token-only baseline without pitch conditioning.
        #[arg(long)]
        no_pitch: bool,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    Infer {
        #[arg(long)]
        ckpt: PathBuf,
        /// Comma-separated symbol ids.
        #[arg(long)]
        symbols: String,
        /// Speaker embedding vector (CSV).
        #[arg(long)]
        speaker: PathBuf,
        /// Pitch contour CSV; its length sets the number of output frames.
        #[arg(long)]
        f0: PathBuf,
        /// Style embedding vector (CSV).
        #[arg(long, conflicts_with = "style_mel", required_unless_present = "style_mel")]
        style: Option<PathBuf>,
        /// Reference mel to derive the style embedding from.
        #[arg(long)]
        style_mel: Option<PathBuf>,
        /// Attention matrix replacing the learned alignment.
        #[arg(long)]
        rhythm: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Also writes a Griffin-Lim rendering.
        #[arg(long)]
        wav: Option<PathBuf>,
    },
    /// Teacher-forced alignment of a recording with its symbols.
    Align {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        speaker_ckpt: PathBuf,
        #[arg(long)]
        wav: PathBuf,
        #[arg(long)]
        symbols: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fine-tunes on the first samples of one corpus speaker.
    Adapt {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        speaker_ckpt: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        speaker: u32,
        #[arg(long)]
        samples: usize,
        #[arg(long, value_enum, default_value = "decoder")]
        mode: Mode,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
enum EvalCmd {
    /// GPE, VDE and FFE between two contour files.
    Pitch {
        #[arg(long)]
        reference: PathBuf,
        #[arg(long)]
        estimate: PathBuf,
        #[arg(long, default_value_t = xclone_core::metrics::DEFAULT_GROSS_THRESHOLD)]
        threshold: f64,
    },
    Eer {
        #[arg(long)]
        scores: PathBuf,
    },
    /// Trains a speaker classifier on labelled embeddings and scores a test set.
    /// Rows are `label,v1,...,vd` without a header.
    Accuracy {
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        test: PathBuf,
    },
}

#[derive(Subcommand)]
enum TaskCmd {
    /// Runs one task manifest (or re-runs the manifest embedded in a report).
    Run {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Runs a grid and writes suite.json and summary.csv.
    Suite {
        #[arg(long)]
        suite: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e);
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::from_overrides(cli.preset, &io::read_json::<serde_json::Value>(path)?)?,
        None => ExperimentConfig::preset(cli.preset),
    };
    if let Some(seed) = cli.seed {
        cfg.reseed(seed);
    }
    cfg.validate()?;
    Ok(cfg)
}

fn print_json(value: &serde_json::Value) {
    println!("{}", serde_json::to_string_pretty(value).expect("json"));
}

fn parse_symbols(s: &str) -> Result<SymbolSequence> {
    let ids = s
        .split(',')
        .map(|t| t.trim().parse::<u8>().map_err(|e| CliError::Usage(format!("symbol {:?}: {}", t, e))))
        .collect::<Result<Vec<_>>>()?;
    SymbolSequence::new(ids).map_err(|e| CliError::Usage(e.to_string()))
}

fn run(cli: Cli) -> Result<()> {
    let cfg = load_config(&cli)?;
    match &cli.command {
        Command::Corpus(CorpusCmd::Gen { out }) => {
            let corpus = generate_corpus(&cfg.corpus)?;
            let path = io::save_corpus(out, &corpus)?;
            print_json(&json!({"manifest": path, "utterances": corpus.utterances.len(), "held_out": corpus.held_out, "corpus_hash": models::corpus_hash(&corpus)}));
        }
        Command::Pitch(PitchCmd::Extract { input, out, threshold }) => {
            let wave = io::read_wav(input)?;
            let yin = YinConfig { harmonicity_threshold: threshold.unwrap_or(cfg.task.yin.harmonicity_threshold), ..cfg.task.yin };
            yin.validate().map_err(|e| CliError::Usage(e.to_string()))?;
            let contour = extract_pitch(&wave, &yin)?;
            io::write_contour(out, &contour)?;
        }
        Command::Pitch(PitchCmd::Scale { input, out, mean_hz }) => {
            let contour = io::read_contour(input, cfg.task.yin.frame.hop_length, cfg.corpus.sample_rate_hz)?;
            io::write_contour(out, &scale_pitch_to_mean(&contour, *mean_hz)?)?;
        }
        Command::Mel(a) => {
            let wave = io::read_wav(&a.input)?;
            let mel_cfg = match a.kind {
                MelKind::Synth => cfg.synth.mel,
                MelKind::Speaker => cfg.speaker.mel,
            };
            io::write_mel(&a.out, &mel_spectrogram(&wave, &mel_cfg)?)?;
        }
        Command::Speaker(cmd) => speaker(cmd, &cfg)?,
        Command::Gst(GstCmd::Embed { mel, ckpt, out }) => {
            let (model, meta) = models::load_synth(ckpt)?;
            let gst = Gst::from_store(meta.config.gst, model.params())?;
            let z = gst.style_embedding(&io::read_mel(mel)?)?;
            io::write_vector(out, z.as_slice())?;
        }
        Command::Synth(cmd) => synth(cmd, &cfg, cli.seed)?,
        Command::Eval(cmd) => eval(cmd, &cfg)?,
        Command::Task(TaskCmd::Run { manifest, out }) => {
            let mut m = tasks::read_manifest(manifest)?;
            if let Some(seed) = cli.seed {
                m.seed = seed;
            }
            let report = tasks::run_task(&m, &cfg.task)?;
            match out {
                Some(path) => io::write_json(path, &report)?,
                None => print!("{}", io::to_json_string(&report)),
            }
        }
        Command::Task(TaskCmd::Suite { suite, out_dir }) => {
            let bytes = std::fs::read(suite).map_err(|e| CliError::io(suite, e))?;
            let mut sc = SuiteConfig::from_json(&bytes)?;
            if let Some(seed) = cli.seed {
                sc.seed = seed;
            }
            let report = tasks::run_suite(&sc, &cfg.task)?;
            io::write_json(&out_dir.join("suite.json"), &report)?;
            let csv_path = out_dir.join("summary.csv");
            std::fs::write(&csv_path, tasks::summary_csv(&report)).map_err(|e| CliError::io(&csv_path, e))?;
            let failed = report.cells.iter().filter(|c| matches!(c.outcome, tasks::CellOutcome::Failed { .. })).count();
            print_json(&json!({"cells": report.cells.len(), "failed": failed, "config_hash": report.config_hash}));
        }
    }
    Ok(())
}

fn speaker(cmd: &SpeakerCmd, cfg: &ExperimentConfig) -> Result<()> {
    match cmd {
        SpeakerCmd::Train { corpus, out, report } => {
            let corpus = io::load_corpus(corpus)?;
            let (model, meta, rep) = models::train_speaker(&corpus, &cfg.speaker, &cfg.speaker_train)?;
            models::save_speaker(out, &model, &meta)?;
            let summary = json!({"eer_untrained": rep.eer_untrained, "eer_trained": rep.eer_trained, "config": meta});
            if let Some(path) = report {
                io::write_json(path, &json!({"summary": summary, "losses": rep.losses}))?;
            }
            print_json(&summary);
        }
        SpeakerCmd::Embed { input, ckpt, out } => {
            let (model, _) = models::load_speaker(ckpt)?;
            let e = model.embed_waveform(&io::read_wav(input)?)?;
            io::write_vector(out, e.as_slice())?;
        }
        SpeakerCmd::Aggregate { inputs, out } => {
            let embs = inputs
                .iter()
                .map(|p| io::read_vector(p).and_then(|v| SpeakerEmbedding::new(v).map_err(|e| CliError::format(p, e.to_string()))))
                .collect::<Result<Vec<_>>>()?;
            io::write_vector(out, aggregate_embeddings(&embs)?.as_slice())?;
        }
    }
    Ok(())
}

fn synth(cmd: &SynthCmd, cfg: &ExperimentConfig, seed: Option<u64>) -> Result<()> {
    let seed = seed.unwrap_or(cfg.synth_train.seed);
    match cmd {
        SynthCmd::Train { corpus, speaker_ckpt, out, no_pitch, report } => {
            let corpus = io::load_corpus(corpus)?;
            let (encoder, encoder_meta) = models::load_speaker(speaker_ckpt)?;
            let scfg = xclone_core::synth::SynthConfig { pitch_conditioning: !no_pitch, ..cfg.synth.clone() };
            let (model, meta, rep) = models::train_synth(&corpus, &encoder, &encoder_meta, &scfg, &cfg.synth_train)?;
            models::save_synth(out, &model, &meta)?;
            let summary = json!({"initial_loss": rep.initial_loss(), "final_loss": rep.final_loss(50), "val_loss": rep.val_loss, "training_speakers": meta.training_speakers});
            if let Some(path) = report {
                io::write_json(path, &json!({"summary": summary, "losses": rep.losses, "meta": meta}))?;
            }
            print_json(&summary);
        }
        SynthCmd::Infer { ckpt, symbols, speaker, f0, style, style_mel, rhythm, out, wav } => {
            let (model, meta) = models::load_synth(ckpt)?;
            let symbols = parse_symbols(symbols)?;
            let s = SpeakerEmbedding::new(io::read_vector(speaker)?).map_err(|e| CliError::format(speaker, e.to_string()))?;
            let contour = io::read_contour(f0, meta.config.mel.frame.hop_length, meta.config.sample_rate_hz)?;
            let z = match (style, style_mel) {
                (Some(p), _) => StyleEmbedding::new(io::read_vector(p)?).map_err(|e| CliError::format(p, e.to_string()))?,
                (None, Some(p)) => model.style_embedding(&io::read_mel(p)?)?,
                (None, None) => return Err(CliError::Usage("one of --style or --style-mel is required".into())),
            };
            let rhythm = match rhythm {
                Some(p) => Some(Rhythm::new(io::read_matrix(p)?).map_err(|e| CliError::format(p, e.to_string()))?),
                None => None,
            };
            let c = Conditioning { symbols: &symbols, speaker: &s, f0: &contour, style: &z };
            let mel = model.synthesize(&c, rhythm.as_ref(), seed)?;
            io::write_mel(out, &mel)?;
            if let Some(path) = wav {
                let gl = griffin_lim_from_mel(&mel, cfg.task.griffin_lim_iters, meta.config.sample_rate_hz)?;
                io::write_wav(path, &gl.waveform)?;
            }
        }
        SynthCmd::Align { ckpt, speaker_ckpt, wav, symbols, out } => {
            let (model, _) = models::load_synth(ckpt)?;
            let (encoder, _) = models::load_speaker(speaker_ckpt)?;
            let symbols = parse_symbols(symbols)?;
            let (mel, f0, s) = prepare_utterance(&io::read_wav(wav)?, &encoder, model.config())?;
            let z = model.style_embedding(&mel)?;
            let c = Conditioning { symbols: &symbols, speaker: &s, f0: &f0, style: &z };
            let r = model.forced_align(&c, &mel, seed)?;
            io::write_matrix(out, r.weights())?;
            print_json(&json!({"decoder_steps": r.decoder_steps(), "encoder_steps": r.encoder_steps(), "durations": r.hard_durations(), "monotonic_fraction": r.monotonic_fraction()}));
        }
        SynthCmd::Adapt { ckpt, speaker_ckpt, corpus, speaker, samples, mode, out } => {
            let (model, mut meta) = models::load_synth(ckpt)?;
            let (encoder, _) = models::load_speaker(speaker_ckpt)?;
            let corpus = io::load_corpus(corpus)?;
            let utts: Vec<_> = corpus.utterances_of(*speaker).take(*samples).collect();
            if utts.len() < *samples {
                return Err(CliError::Usage(format!("speaker {} has {} utterances, {} requested", speaker, utts.len(), samples)));
            }
            let prepared = prepare_utterances(utts, &encoder, model.config())?;
            let mode = match mode {
                Mode::Whole => AdaptMode::Whole,
                Mode::Decoder => AdaptMode::Decoder,
            };
            let adapted = adapt(&model, &prepared, &xclone_core::synth::AdaptConfig { mode, ..cfg.task.adapt.clone() })?;
            if !meta.training_speakers.contains(speaker) {
                meta.training_speakers.push(*speaker);
                meta.training_speakers.sort_unstable();
            }
            models::save_synth(out, &adapted, &meta)?;
        }
    }
    Ok(())
}

fn read_labelled(path: &Path) -> Result<(Vec<Vec<f64>>, Vec<u32>)> {
    let m = io::read_matrix(path)?;
    if m.cols() < 2 {
        return Err(CliError::format(path, "rows need a label and at least one value"));
    }
    let mut labels = Vec::with_capacity(m.rows());
    let mut rows = Vec::with_capacity(m.rows());
    for r in m.iter_rows() {
        if r[0] < 0.0 || r[0].fract() != 0.0 {
            return Err(CliError::format(path, format!("label {} is not a non-negative integer", r[0])));
        }
        labels.push(r[0] as u32);
        rows.push(r[1..].to_vec());
    }
    Ok((rows, labels))
}

fn eval(cmd: &EvalCmd, cfg: &ExperimentConfig) -> Result<()> {
    let hop = cfg.task.yin.frame.hop_length;
    let sr = cfg.corpus.sample_rate_hz;
    match cmd {
        EvalCmd::Pitch { reference, estimate, threshold } => {
            let r = io::read_contour(reference, hop, sr)?;
            let e = io::read_contour(estimate, hop, sr)?;
            let c = pitch_error_counts(&r, &e, *threshold)?;
            print_json(&json!({"gpe": c.gpe().value(), "vde": c.vde().value(), "ffe": c.ffe().value(), "counts": c}));
        }
        EvalCmd::Eer { scores } => {
            let set = io::read_scores(scores)?;
            print_json(&json!({"eer": eer(&set)?, "genuine": set.genuine_scores.len(), "impostor": set.impostor_scores.len()}));
        }
        EvalCmd::Accuracy { train, test } => {
            let (xs, ys) = read_labelled(train)?;
            let (tx, ty) = read_labelled(test)?;
            let clf = Classifier::train(&xs, &ys, &ClassifierConfig::default())?;
            print_json(&json!({"accuracy": clf.accuracy(&tx, &ty)?, "test_rows": ty.len()}));
        }
    }
    Ok(())
}
