//! Cloning tasks (text, imitation, style transfer) under the three cloning
//! techniques, and grid sweeps over them.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use xclone_core::corpus::{mix_seed, Corpus, Split, StyleClass, Utterance};
use xclone_core::dsp::griffin_lim_from_mel;
use xclone_core::gst::StyleEmbedding;
use xclone_core::metrics::{pitch_correlation, pitch_error_counts, PitchErrorCounts};
use xclone_core::speaker::{aggregate_embeddings, SpeakerEmbedding, SpeakerEncoder};
use xclone_core::synth::{adapt, prepare_utterance, prepare_utterances, AdaptMode, Conditioning, Synthesizer, MAX_ADAPT_SAMPLES};
use xclone_core::yin::{extract_pitch, mean_pitch, scale_pitch_to_mean, PitchContour};

use crate::config::{json_hash, TaskSettings};
use crate::error::{CliError, Result};
use crate::io::load_corpus;
use crate::models::{checkpoint_hash, corpus_hash, load_speaker, load_synth, SynthMeta};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    /// Speak new text in the target voice with a neutral style source.
    Text,
    /// Reconstruct a target utterance from its own factorized conditioning.
    Imitation,
    /// Pitch and rhythm from another speaker's expressive utterance.
    StyleTransfer,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Technique {
    ZeroShot,
    AdaptWhole,
    AdaptDecoder,
}

impl Task {
    pub fn name(self) -> &'static str {
        match self {
            Task::Text => "text",
            Task::Imitation => "imitation",
            Task::StyleTransfer => "style_transfer",
        }
    }
}

impl Technique {
    pub fn name(self) -> &'static str {
        match self {
            Technique::ZeroShot => "zero_shot",
            Technique::AdaptWhole => "adapt_whole",
            Technique::AdaptDecoder => "adapt_decoder",
        }
    }
}

/// One task run. Paths are resolved against the working directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskManifest {
    pub task: Task,
    pub technique: Technique,
    pub n_target_samples: usize,
    pub corpus: PathBuf,
    pub speaker_checkpoint: PathBuf,
    pub synth_checkpoint: PathBuf,
    /// Defaults to the corpus's first held-out speaker.
    #[serde(default)]
    pub target_speaker: Option<u32>,
    pub seed: u64,
    #[serde(default)]
    pub settings: Option<TaskSettings>,
}

impl TaskManifest {
    /// Parses and validates a manifest; every failure is a manifest error.
    pub fn from_json(bytes: &[u8]) -> Result<Self> {
        let m: TaskManifest = serde_json::from_slice(bytes).map_err(|e| CliError::Manifest(e.to_string()))?;
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=MAX_ADAPT_SAMPLES).contains(&self.n_target_samples) {
            return Err(CliError::Manifest(format!("n_target_samples must be in 1..={}, got {}", MAX_ADAPT_SAMPLES, self.n_target_samples)));
        }
        if let Some(s) = &self.settings {
            s.validate().map_err(|e| CliError::Manifest(e.to_string()))?;
        }
        Ok(())
    }
}

/// Reads a manifest file, or the manifest embedded in a previous report.
pub fn read_manifest(path: &Path) -> Result<TaskManifest> {
    let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
    if let Ok(report) = serde_json::from_slice::<RunReport>(&bytes) {
        report.manifest.validate()?;
        return Ok(report.manifest);
    }
    TaskManifest::from_json(&bytes)
}

/// Scores for one evaluated utterance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemMetrics {
    /// Target-speaker utterance whose voice is the reference.
    pub target_utterance: usize,
    pub style_source_utterance: Option<usize>,
    pub speaker_cosine_target: f64,
    pub speaker_cosine_style_source: Option<f64>,
    pub mel_mse: Option<f64>,
    /// Unset when the rendering and the contour share fewer than two voiced frames.
    pub pitch_correlation: Option<f64>,
    pub pitch_errors: Option<PitchErrorCounts>,
}

/// Averages over the evaluated utterances; pitch errors are pooled over frames.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskMetrics {
    pub speaker_cosine_target: f64,
    pub speaker_cosine_style_source: Option<f64>,
    pub mel_mse: Option<f64>,
    pub gpe: Option<f64>,
    pub vde: Option<f64>,
    pub ffe: Option<f64>,
    pub pitch_correlation: Option<f64>,
    pub items: Vec<ItemMetrics>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub version: String,
    pub seed: u64,
    pub manifest_hash: String,
    pub settings_hash: String,
    pub corpus_hash: String,
    pub speaker_checkpoint_hash: String,
    pub synth_checkpoint_hash: String,
    pub synth_config_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    /// The resolved manifest; running it again reproduces this report.
    pub manifest: TaskManifest,
    pub target_speaker: u32,
    pub pitch_conditioning: bool,
    pub sample_utterances: Vec<usize>,
    pub metrics: TaskMetrics,
    pub provenance: Provenance,
}

/// Corpus and models shared by the runs of a suite.
pub struct Assets {
    pub corpus: Corpus,
    pub encoder: SpeakerEncoder,
    pub synth: Synthesizer,
    pub synth_meta: SynthMeta,
    corpus_hash: String,
    speaker_checkpoint_hash: String,
    synth_checkpoint_hash: String,
}

impl Assets {
    pub fn new(corpus: Corpus, encoder: SpeakerEncoder, speaker_meta_json: String, synth: Synthesizer, synth_meta: SynthMeta) -> Self {
        let speaker_checkpoint_hash = checkpoint_hash(&encoder.to_checkpoint(speaker_meta_json));
        let synth_checkpoint_hash = checkpoint_hash(&synth.to_checkpoint(serde_json::to_string(&synth_meta).expect("meta serializes")));
        Assets { corpus_hash: corpus_hash(&corpus), corpus, encoder, synth, synth_meta, speaker_checkpoint_hash, synth_checkpoint_hash }
    }

    pub fn load(corpus: &Path, speaker_checkpoint: &Path, synth_checkpoint: &Path) -> Result<Self> {
        let (encoder, speaker_meta) = load_speaker(speaker_checkpoint)?;
        let (synth, synth_meta) = load_synth(synth_checkpoint)?;
        let corpus = load_corpus(corpus)?;
        Ok(Assets::new(corpus, encoder, serde_json::to_string(&speaker_meta).expect("meta serializes"), synth, synth_meta))
    }
}

/// Loads the manifest's inputs and runs it.
pub fn run_task(manifest: &TaskManifest, default_settings: &TaskSettings) -> Result<RunReport> {
    manifest.validate()?;
    let assets = Assets::load(&manifest.corpus, &manifest.speaker_checkpoint, &manifest.synth_checkpoint)?;
    run_task_with(&assets, manifest, default_settings)
}

struct Target<'a> {
    id: u32,
    eval: Vec<&'a Utterance>,
    samples: Vec<&'a Utterance>,
}

fn select_target<'a>(assets: &'a Assets, manifest: &TaskManifest, settings: &TaskSettings) -> Result<Target<'a>> {
    let corpus = &assets.corpus;
    let id = match manifest.target_speaker {
        Some(id) => id,
        None => *corpus.held_out.first().ok_or_else(|| CliError::HeldOutViolation("corpus reserves no held-out speaker".into()))?,
    };
    if corpus.speaker(id).is_none() {
        return Err(CliError::Manifest(format!("target speaker {} is not in the corpus", id)));
    }
    if !corpus.is_held_out(id) {
        return Err(CliError::HeldOutViolation(format!("target speaker {} is not held out in the corpus", id)));
    }
    if assets.synth_meta.training_speakers.contains(&id) {
        return Err(CliError::HeldOutViolation(format!("target speaker {} was used to train the synthesizer", id)));
    }
    let eval: Vec<&Utterance> = corpus.utterances_of(id).filter(|u| u.split == Split::Val).take(settings.eval_utterances).collect();
    if eval.len() < settings.eval_utterances {
        return Err(CliError::Manifest(format!("speaker {} has {} validation utterances, {} needed for scoring", id, eval.len(), settings.eval_utterances)));
    }
    let samples: Vec<&Utterance> = corpus.utterances_of(id).filter(|u| !eval.iter().any(|e| e.id == u.id)).take(manifest.n_target_samples).collect();
    if samples.len() < manifest.n_target_samples {
        return Err(CliError::Manifest(format!("speaker {} has only {} utterances outside the scoring set", id, samples.len())));
    }
    Ok(Target { id, eval, samples })
}

/// Seen-speaker validation utterances of one style class, rotated by the seed.
fn style_sources<'a>(assets: &'a Assets, style: StyleClass, n: usize, seed: u64) -> Result<Vec<&'a Utterance>> {
    let seen = &assets.synth_meta.training_speakers;
    let pool: Vec<&Utterance> = assets
        .corpus
        .utterances
        .iter()
        .filter(|u| u.split == Split::Val && u.style == style && seen.contains(&u.speaker_id))
        .collect();
    if pool.is_empty() {
        return Err(CliError::Manifest(format!("corpus has no {:?} validation utterances from seen speakers", style)));
    }
    let start = (mix_seed(seed, 31, 0) % pool.len() as u64) as usize;
    Ok((0..n).map(|i| pool[(start + i) % pool.len()]).collect())
}

struct Rendered {
    contour: PitchContour,
    embedding: SpeakerEmbedding,
}

fn render(assets: &Assets, settings: &TaskSettings, mel: &xclone_core::dsp::MelSpectrogram) -> Result<Rendered> {
    let sr = assets.synth.config().sample_rate_hz;
    let wave = griffin_lim_from_mel(mel, settings.griffin_lim_iters, sr)?.waveform;
    let contour = extract_pitch(&wave, &settings.yin)?;
    let embedding = assets.encoder.embed_waveform(&wave)?;
    Ok(Rendered { contour, embedding })
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (s, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| s / n as f64)
}

/// Runs one task against preloaded assets.
pub fn run_task_with(assets: &Assets, manifest: &TaskManifest, default_settings: &TaskSettings) -> Result<RunReport> {
    manifest.validate()?;
    let mut manifest = manifest.clone();
    let settings = manifest.settings.get_or_insert_with(|| default_settings.clone()).clone();
    settings.validate()?;
    let target = select_target(assets, &manifest, &settings)?;
    let cfg = assets.synth.config();
    let seed = manifest.seed;

    let prepared = prepare_utterances(target.samples.iter().copied(), &assets.encoder, cfg)?;
    let model = match manifest.technique {
        Technique::ZeroShot => assets.synth.clone(),
        Technique::AdaptWhole | Technique::AdaptDecoder => {
            let mode = if manifest.technique == Technique::AdaptWhole { AdaptMode::Whole } else { AdaptMode::Decoder };
            let acfg = xclone_core::synth::AdaptConfig { mode, seed: mix_seed(settings.adapt.seed, seed, 1), ..settings.adapt.clone() };
            adapt(&assets.synth, &prepared, &acfg)?
        }
    };

    let target_s = aggregate_embeddings(&prepared.iter().map(|p| p.speaker.clone()).collect::<Vec<_>>())?;
    let target_z = StyleEmbedding::mean(&prepared.iter().map(|p| model.style_embedding(&p.mel)).collect::<xclone_core::Result<Vec<_>>>()?)?;
    let target_f0 = mean_pitch(&prepared.iter().map(|p| p.f0.clone()).collect::<Vec<_>>())?;
    let reference = aggregate_embeddings(&target.eval.iter().map(|u| assets.encoder.embed_waveform(&u.waveform)).collect::<xclone_core::Result<Vec<_>>>()?)?;

    let sources = match manifest.task {
        Task::Imitation => Vec::new(),
        Task::Text => style_sources(assets, StyleClass::Neutral, target.eval.len(), seed)?,
        Task::StyleTransfer => style_sources(assets, StyleClass::Expressive, target.eval.len(), seed)?,
    };

    let mut items = Vec::with_capacity(target.eval.len());
    for (i, u) in target.eval.iter().enumerate() {
        let item_seed = mix_seed(seed, 7, i as u64);
        let item = match manifest.task {
            Task::Imitation => imitation_item(assets, &model, &settings, u, &reference, item_seed)?,
            _ => transfer_item(assets, &model, &settings, u.id, sources[i], &target_s, &target_z, target_f0, &reference, item_seed)?,
        };
        items.push(item);
    }

    let pooled = items.iter().filter_map(|i| i.pitch_errors).reduce(|a, b| a.merge(&b));
    let metrics = TaskMetrics {
        speaker_cosine_target: mean(items.iter().map(|i| i.speaker_cosine_target)).unwrap_or(f64::NAN),
        speaker_cosine_style_source: mean(items.iter().filter_map(|i| i.speaker_cosine_style_source)),
        mel_mse: mean(items.iter().filter_map(|i| i.mel_mse)),
        gpe: pooled.map(|c| c.gpe().value()),
        vde: pooled.map(|c| c.vde().value()),
        ffe: pooled.map(|c| c.ffe().value()),
        pitch_correlation: mean(items.iter().filter_map(|i| i.pitch_correlation)),
        items,
    };
    let provenance = Provenance {
        version: env!("CARGO_PKG_VERSION").to_string(),
        seed,
        manifest_hash: json_hash(&manifest),
        settings_hash: json_hash(&settings),
        corpus_hash: assets.corpus_hash.clone(),
        speaker_checkpoint_hash: assets.speaker_checkpoint_hash.clone(),
        synth_checkpoint_hash: assets.synth_checkpoint_hash.clone(),
        synth_config_hash: json_hash(cfg),
    };
    Ok(RunReport {
        target_speaker: target.id,
        pitch_conditioning: cfg.pitch_conditioning,
        sample_utterances: target.samples.iter().map(|u| u.id).collect(),
        metrics,
        provenance,
        manifest,
    })
}

fn imitation_item(assets: &Assets, model: &Synthesizer, settings: &TaskSettings, u: &Utterance, reference: &SpeakerEmbedding, seed: u64) -> Result<ItemMetrics> {
    let (mel, f0, s) = prepare_utterance(&u.waveform, &assets.encoder, model.config())?;
    let z = model.style_embedding(&mel)?;
    let c = Conditioning { symbols: &u.symbols, speaker: &s, f0: &f0, style: &z };
    let rhythm = model.forced_align(&c, &mel, seed)?;
    let out = model.synthesize(&c, Some(&rhythm), mix_seed(seed, 1, 0))?;
    let mse = out.frames().mse(mel.frames())?;
    let r = render(assets, settings, &out)?;
    let truth = extract_pitch(&u.waveform, &settings.yin)?.resample_nearest(r.contour.len());
    let counts = pitch_error_counts(&truth, &r.contour, settings.gross_threshold)?;
    Ok(ItemMetrics {
        target_utterance: u.id,
        style_source_utterance: None,
        speaker_cosine_target: r.embedding.cosine(reference),
        speaker_cosine_style_source: None,
        mel_mse: Some(mse),
        pitch_correlation: None,
        pitch_errors: Some(counts),
    })
}

#[allow(clippy::too_many_arguments)]
fn transfer_item(
    assets: &Assets,
    model: &Synthesizer,
    settings: &TaskSettings,
    target_utterance: usize,
    source: &Utterance,
    target_s: &SpeakerEmbedding,
    target_z: &StyleEmbedding,
    target_f0: f64,
    reference: &SpeakerEmbedding,
    seed: u64,
) -> Result<ItemMetrics> {
    let (mel, f0, s) = prepare_utterance(&source.waveform, &assets.encoder, model.config())?;
    let source_z = model.style_embedding(&mel)?;
    let own = Conditioning { symbols: &source.symbols, speaker: &s, f0: &f0, style: &source_z };
    let rhythm = model.forced_align(&own, &mel, seed)?;
    let scaled = scale_pitch_to_mean(&f0, target_f0)?;
    // Without pitch conditioning the style embedding is the only carrier of
    // the source prosody, so the baseline takes z from the style reference.
    let z = if model.config().pitch_conditioning { target_z } else { &source_z };
    let c = Conditioning { symbols: &source.symbols, speaker: target_s, f0: &scaled, style: z };
    let out = model.synthesize(&c, Some(&rhythm), mix_seed(seed, 1, 0))?;
    let r = render(assets, settings, &out)?;
    // A rendering with fewer than two voiced frames in common has no defined correlation.
    let corr = pitch_correlation(&scaled.resample_nearest(r.contour.len()), &r.contour).ok().map(|(c, _)| c);
    let source_embedding = assets.encoder.embed_waveform(&source.waveform)?;
    Ok(ItemMetrics {
        target_utterance,
        style_source_utterance: Some(source.id),
        speaker_cosine_target: r.embedding.cosine(reference),
        speaker_cosine_style_source: Some(r.embedding.cosine(&source_embedding)),
        mel_mse: None,
        pitch_correlation: corr,
        pitch_errors: None,
    })
}

/// Grid of runs sharing one corpus, checkpoint pair, target and seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SuiteConfig {
    pub corpus: PathBuf,
    pub speaker_checkpoint: PathBuf,
    pub synth_checkpoint: PathBuf,
    #[serde(default)]
    pub target_speaker: Option<u32>,
    pub seed: u64,
    pub tasks: Vec<Task>,
    pub techniques: Vec<Technique>,
    pub sample_counts: Vec<usize>,
    #[serde(default)]
    pub settings: Option<TaskSettings>,
}

impl SuiteConfig {
    pub fn from_json(bytes: &[u8]) -> Result<Self> {
        serde_json::from_slice(bytes).map_err(|e| CliError::Manifest(e.to_string()))
    }

    pub fn cells(&self) -> Result<Vec<TaskManifest>> {
        if self.tasks.is_empty() || self.techniques.is_empty() || self.sample_counts.is_empty() {
            return Err(CliError::Manifest("suite grid is empty: tasks, techniques and sample_counts all need entries".into()));
        }
        let mut out = Vec::new();
        for &task in &self.tasks {
            for &technique in &self.techniques {
                for &n in &self.sample_counts {
                    out.push(TaskManifest {
                        task,
                        technique,
                        n_target_samples: n,
                        corpus: self.corpus.clone(),
                        speaker_checkpoint: self.speaker_checkpoint.clone(),
                        synth_checkpoint: self.synth_checkpoint.clone(),
                        target_speaker: self.target_speaker,
                        seed: self.seed,
                        settings: self.settings.clone(),
                    });
                }
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellOutcome {
    Ok(Box<RunReport>),
    Failed { error: String, exit_code: i32 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteCell {
    pub task: Task,
    pub technique: Technique,
    pub n_target_samples: usize,
    pub outcome: CellOutcome,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub config: SuiteConfig,
    pub config_hash: String,
    pub cells: Vec<SuiteCell>,
}

pub fn run_suite(cfg: &SuiteConfig, default_settings: &TaskSettings) -> Result<SuiteReport> {
    cfg.cells()?;
    let assets = Assets::load(&cfg.corpus, &cfg.speaker_checkpoint, &cfg.synth_checkpoint)?;
    run_suite_with(&assets, cfg, default_settings)
}

/// Runs every grid cell in order. A failing cell is recorded and the sweep
/// continues; only an empty grid fails the whole suite.
pub fn run_suite_with(assets: &Assets, cfg: &SuiteConfig, default_settings: &TaskSettings) -> Result<SuiteReport> {
    let mut cfg = cfg.clone();
    cfg.settings.get_or_insert_with(|| default_settings.clone());
    let cells = cfg
        .cells()?
        .into_iter()
        .map(|m| {
            let outcome = match run_task_with(assets, &m, default_settings) {
                Ok(r) => CellOutcome::Ok(Box::new(r)),
                Err(e) => CellOutcome::Failed { error: e.to_string(), exit_code: e.exit_code() },
            };
            SuiteCell { task: m.task, technique: m.technique, n_target_samples: m.n_target_samples, outcome }
        })
        .collect();
    Ok(SuiteReport { config_hash: json_hash(&cfg), config: cfg, cells })
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// One row per cell, ready for plotting metrics against sample count.
pub fn summary_csv(report: &SuiteReport) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "task",
        "technique",
        "n_target_samples",
        "status",
        "speaker_cosine_target",
        "speaker_cosine_style_source",
        "mel_mse",
        "gpe",
        "vde",
        "ffe",
        "pitch_correlation",
        "error",
    ])
    .expect("in-memory csv");
    for c in &report.cells {
        let head = [c.task.name().to_string(), c.technique.name().to_string(), c.n_target_samples.to_string()];
        let rest = match &c.outcome {
            CellOutcome::Ok(r) => {
                let m = &r.metrics;
                [
                    "ok".to_string(),
                    m.speaker_cosine_target.to_string(),
                    opt(m.speaker_cosine_style_source),
                    opt(m.mel_mse),
                    opt(m.gpe),
                    opt(m.vde),
                    opt(m.ffe),
                    opt(m.pitch_correlation),
                    String::new(),
                ]
            }
            CellOutcome::Failed { error, .. } => {
                let mut row: [String; 9] = Default::default();
                row[0] = "failed".into();
                row[8] = error.clone();
                row
            }
        };
        w.write_record(head.iter().chain(rest.iter())).expect("in-memory csv");
    }
    String::from_utf8(w.into_inner().expect("in-memory csv")).expect("utf8 csv")
}
