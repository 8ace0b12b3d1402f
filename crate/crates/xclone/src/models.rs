//! Checkpoint metadata and model training entry points.

use std::path::Path;

use serde::{Deserialize, Serialize};
use xclone_core::autodiff::Checkpoint;
use xclone_core::corpus::Corpus;
use xclone_core::speaker::{self, SpeakerEncoder, SpeakerEncoderConfig, SpeakerTrainConfig, SpeakerTrainReport};
use xclone_core::synth::{self, SynthConfig, SynthTrainConfig, SynthTrainReport, Synthesizer};

use crate::error::{CliError, Result};
use crate::io::{read_checkpoint, write_checkpoint};

/// Metadata stored alongside speaker encoder weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeakerMeta {
    pub config: SpeakerEncoderConfig,
    pub train: SpeakerTrainConfig,
    pub corpus_hash: String,
}

/// Metadata stored alongside synthesizer weights. `training_speakers` lets a
/// task runner prove that its target speaker was never seen in training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthMeta {
    pub config: SynthConfig,
    pub train: SynthTrainConfig,
    pub training_speakers: Vec<u32>,
    pub corpus_hash: String,
    pub speaker_checkpoint_hash: String,
}

fn parse_meta<T: for<'de> Deserialize<'de>>(path: &Path, ck: &Checkpoint) -> Result<T> {
    serde_json::from_str(&ck.meta).map_err(|e| CliError::format(path, format!("checkpoint metadata: {}", e)))
}

pub fn save_speaker(path: &Path, model: &SpeakerEncoder, meta: &SpeakerMeta) -> Result<()> {
    write_checkpoint(path, &model.to_checkpoint(serde_json::to_string(meta).expect("meta serializes")))
}

pub fn load_speaker(path: &Path) -> Result<(SpeakerEncoder, SpeakerMeta)> {
    let ck = read_checkpoint(path)?;
    let meta: SpeakerMeta = parse_meta(path, &ck)?;
    let model = SpeakerEncoder::from_checkpoint(meta.config.clone(), ck).map_err(|e| CliError::format(path, e.to_string()))?;
    Ok((model, meta))
}

pub fn save_synth(path: &Path, model: &Synthesizer, meta: &SynthMeta) -> Result<()> {
    write_checkpoint(path, &model.to_checkpoint(serde_json::to_string(meta).expect("meta serializes")))
}

pub fn load_synth(path: &Path) -> Result<(Synthesizer, SynthMeta)> {
    let ck = read_checkpoint(path)?;
    let meta: SynthMeta = parse_meta(path, &ck)?;
    let model = Synthesizer::from_checkpoint(meta.config.clone(), ck).map_err(|e| CliError::format(path, e.to_string()))?;
    Ok((model, meta))
}

/// Hash of the encoded checkpoint, identical to hashing the file on disk.
pub fn checkpoint_hash(ck: &Checkpoint) -> String {
    crate::config::bytes_hash(&xclone_core::autodiff::encode_checkpoint(ck))
}

/// Content hash of a corpus: its descriptor, speakers, split assignment and
/// every waveform sample.
pub fn corpus_hash(corpus: &Corpus) -> String {
    use sha2::{Digest, Sha256};
    let mut h = Sha256::new();
    h.update(serde_json::to_vec(&(&corpus.spec, &corpus.speakers, &corpus.held_out)).expect("serializable"));
    for u in &corpus.utterances {
        h.update(serde_json::to_vec(&(u.id, u.speaker_id, &u.symbols, u.split, u.style, u.render_seed, &u.plan)).expect("serializable"));
        h.update(u.waveform.sample_rate_hz().to_le_bytes());
        for s in u.waveform.samples() {
            h.update(s.to_le_bytes());
        }
    }
    h.finalize().iter().map(|b| format!("{:02x}", b)).collect()
}

pub fn train_speaker(corpus: &Corpus, cfg: &SpeakerEncoderConfig, tcfg: &SpeakerTrainConfig) -> Result<(SpeakerEncoder, SpeakerMeta, SpeakerTrainReport)> {
    let (model, report) = speaker::train_speaker_encoder(corpus, cfg, tcfg)?;
    let meta = SpeakerMeta { config: cfg.clone(), train: tcfg.clone(), corpus_hash: corpus_hash(corpus) };
    Ok((model, meta, report))
}

pub fn train_synth(
    corpus: &Corpus,
    encoder: &SpeakerEncoder,
    encoder_meta: &SpeakerMeta,
    cfg: &SynthConfig,
    tcfg: &SynthTrainConfig,
) -> Result<(Synthesizer, SynthMeta, SynthTrainReport)> {
    let (model, report) = synth::train(corpus, encoder, cfg, tcfg)?;
    let mut training_speakers: Vec<u32> = corpus.synth_train().map(|u| u.speaker_id).collect();
    training_speakers.sort_unstable();
    training_speakers.dedup();
    let speaker_ck = encoder.to_checkpoint(serde_json::to_string(encoder_meta).expect("meta serializes"));
    let meta = SynthMeta {
        config: cfg.clone(),
        train: tcfg.clone(),
        training_speakers,
        corpus_hash: corpus_hash(corpus),
        speaker_checkpoint_hash: checkpoint_hash(&speaker_ck),
    };
    Ok((model, meta, report))
}
