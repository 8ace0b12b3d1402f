//! File formats: WAV, mel/rhythm matrices, pitch contours, plans, vectors,
//! score lists, checkpoints and corpus directories.

use std::fs;
use std::io::{BufReader, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use xclone_core::autodiff::{decode_checkpoint, encode_checkpoint, Checkpoint};
use xclone_core::corpus::{Corpus, CorpusSpec, PlanSegment, SpeakerParams, Split, StyleClass, SymbolSequence, Utterance, UtterancePlan};
use xclone_core::dsp::{MelConfig, MelSpectrogram, Waveform};
use xclone_core::metrics::ScoreSet;
use xclone_core::yin::PitchContour;
use xclone_core::Matrix;

use crate::error::{CliError, Result};

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| CliError::io(path, e))
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

/// Reads a 16-bit PCM mono WAV file.
pub fn read_wav(path: &Path) -> Result<Waveform> {
    let file = fs::File::open(path).map_err(|e| CliError::io(path, e))?;
    let reader = hound::WavReader::new(BufReader::new(file)).map_err(|e| CliError::format(path, e.to_string()))?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(CliError::format(path, format!("unsupported format: {} channels, expected mono", spec.channels)));
    }
    if spec.sample_format != hound::SampleFormat::Int || spec.bits_per_sample != 16 {
        return Err(CliError::format(path, format!("unsupported format: {:?} {}-bit, expected 16-bit PCM", spec.sample_format, spec.bits_per_sample)));
    }
    let expected = reader.len() as usize;
    let samples: Vec<f64> = reader
        .into_samples::<i16>()
        .map(|s| s.map(|v| v as f64 / 32768.0))
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| CliError::format(path, e.to_string()))?;
    if samples.len() != expected {
        return Err(CliError::format(path, format!("truncated: {} of {} samples", samples.len(), expected)));
    }
    if samples.is_empty() {
        return Err(CliError::format(path, "no samples"));
    }
    Waveform::new(samples, spec.sample_rate).map_err(|e| CliError::format(path, e.to_string()))
}

/// Writes a 16-bit PCM mono WAV file (samples clipped to the 16-bit range).
pub fn write_wav(path: &Path, wave: &Waveform) -> Result<()> {
    let spec = hound::WavSpec { channels: 1, sample_rate: wave.sample_rate_hz(), bits_per_sample: 16, sample_format: hound::SampleFormat::Int };
    let mut cursor = std::io::Cursor::new(Vec::new());
    {
        let mut w = hound::WavWriter::new(&mut cursor, spec).map_err(|e| CliError::format(path, e.to_string()))?;
        for &s in wave.samples() {
            let q = (s * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
            w.write_sample(q).map_err(|e| CliError::format(path, e.to_string()))?;
        }
        w.finalize().map_err(|e| CliError::format(path, e.to_string()))?;
    }
    write_bytes(path, &cursor.into_inner())
}

/// Magic prefix of the binary matrix format.
pub const MATRIX_MAGIC: &[u8; 8] = b"XCMATRX1";

/// Binary matrix: magic, u32 rows, u32 cols, then row-major little-endian f32.
pub fn encode_matrix(m: &Matrix) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + 4 * m.as_slice().len());
    out.extend_from_slice(MATRIX_MAGIC);
    out.extend_from_slice(&(m.rows() as u32).to_le_bytes());
    out.extend_from_slice(&(m.cols() as u32).to_le_bytes());
    for &v in m.as_slice() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

pub fn decode_matrix(bytes: &[u8]) -> std::result::Result<Matrix, String> {
    if bytes.len() < 16 || &bytes[..8] != MATRIX_MAGIC {
        return Err("not a matrix file (bad magic)".into());
    }
    let rows = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
    let cols = u32::from_le_bytes(bytes[12..16].try_into().expect("4 bytes")) as usize;
    let n = rows.checked_mul(cols).ok_or("matrix dimensions overflow")?;
    let body = &bytes[16..];
    if body.len() != 4 * n {
        return Err(format!("expected {} data bytes for {}x{}, found {}", 4 * n, rows, cols, body.len()));
    }
    let data = body.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64).collect();
    Matrix::from_vec(rows, cols, data).map_err(|e| e.to_string())
}

fn is_csv(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"))
}

/// Reads a matrix from CSV (one row per line, no header) or the binary format,
/// chosen by the `.csv` extension.
pub fn read_matrix(path: &Path) -> Result<Matrix> {
    if is_csv(path) {
        let mut rdr = csv::ReaderBuilder::new().has_headers(false).from_path(path).map_err(|e| CliError::format(path, e.to_string()))?;
        let mut rows = Vec::new();
        for rec in rdr.records() {
            let rec = rec.map_err(|e| CliError::format(path, e.to_string()))?;
            let row = rec.iter().map(|f| f.trim().parse::<f64>()).collect::<std::result::Result<Vec<_>, _>>().map_err(|e| CliError::format(path, e.to_string()))?;
            rows.push(row);
        }
        Matrix::from_rows(&rows).map_err(|e| CliError::format(path, e.to_string()))
    } else {
        decode_matrix(&read_bytes(path)?).map_err(|e| CliError::format(path, e))
    }
}

pub fn write_matrix(path: &Path, m: &Matrix) -> Result<()> {
    if is_csv(path) {
        let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
        for r in m.iter_rows() {
            w.write_record(r.iter().map(|v| v.to_string())).map_err(|e| CliError::format(path, e.to_string()))?;
        }
        let bytes = w.into_inner().map_err(|e| CliError::format(path, e.to_string()))?;
        write_bytes(path, &bytes)
    } else {
        write_bytes(path, &encode_matrix(m))
    }
}

/// Reads a log-mel matrix; analysis settings default to the synthesizer's,
/// with the channel count taken from the file.
pub fn read_mel(path: &Path) -> Result<MelSpectrogram> {
    let m = read_matrix(path)?;
    let cfg = MelConfig { n_mels: m.cols(), ..MelConfig::synth() };
    MelSpectrogram::new(m, cfg).map_err(|e| CliError::format(path, e.to_string()))
}

pub fn write_mel(path: &Path, mel: &MelSpectrogram) -> Result<()> {
    write_matrix(path, mel.frames())
}

#[derive(Debug, Serialize, Deserialize)]
struct ContourRow {
    frame: usize,
    time_s: f64,
    f0_hz: f64,
    voiced: u8,
}

/// Contour CSV with header `frame,time_s,f0_hz,voiced`.
pub fn write_contour(path: &Path, c: &PitchContour) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for i in 0..c.len() {
        let row = ContourRow { frame: i, time_s: c.frame_time_s(i), f0_hz: c.f0_hz()[i], voiced: c.voiced()[i] as u8 };
        w.serialize(row).map_err(|e| CliError::format(path, e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::format(path, e.to_string()))?;
    write_bytes(path, &bytes)
}

pub fn read_contour(path: &Path, hop_length_samples: usize, sample_rate_hz: u32) -> Result<PitchContour> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| CliError::format(path, e.to_string()))?;
    let (mut f0, mut voiced) = (Vec::new(), Vec::new());
    for (i, rec) in rdr.deserialize::<ContourRow>().enumerate() {
        let row = rec.map_err(|e| CliError::format(path, e.to_string()))?;
        if row.frame != i {
            return Err(CliError::format(path, format!("frame {} out of order at line {}", row.frame, i + 2)));
        }
        if row.voiced > 1 {
            return Err(CliError::format(path, format!("voiced flag {} is not 0 or 1", row.voiced)));
        }
        f0.push(row.f0_hz);
        voiced.push(row.voiced == 1);
    }
    PitchContour::new(f0, voiced, hop_length_samples, sample_rate_hz).map_err(|e| CliError::format(path, e.to_string()))
}

#[derive(Debug, Serialize, Deserialize)]
struct PlanRow {
    symbol: u8,
    duration_ms: f64,
    f0_start: f64,
    f0_end: f64,
    voiced: u8,
}

/// Plan CSV with header `symbol,duration_ms,f0_start,f0_end,voiced`.
pub fn write_plan(path: &Path, plan: &UtterancePlan) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for s in plan.segments() {
        let row = PlanRow { symbol: s.symbol, duration_ms: s.duration_ms, f0_start: s.f0_start_hz, f0_end: s.f0_end_hz, voiced: s.voiced as u8 };
        w.serialize(row).map_err(|e| CliError::format(path, e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::format(path, e.to_string()))?;
    write_bytes(path, &bytes)
}

pub fn read_plan(path: &Path) -> Result<UtterancePlan> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| CliError::format(path, e.to_string()))?;
    let mut segs = Vec::new();
    for rec in rdr.deserialize::<PlanRow>() {
        let r = rec.map_err(|e| CliError::format(path, e.to_string()))?;
        segs.push(PlanSegment { symbol: r.symbol, duration_ms: r.duration_ms, f0_start_hz: r.f0_start, f0_end_hz: r.f0_end, voiced: r.voiced == 1 });
    }
    UtterancePlan::new(segs).map_err(|e| CliError::format(path, e.to_string()))
}

/// A vector as a single comma-separated line.
pub fn write_vector(path: &Path, v: &[f64]) -> Result<()> {
    let line: Vec<String> = v.iter().map(|x| x.to_string()).collect();
    write_bytes(path, format!("{}\n", line.join(",")).as_bytes())
}

pub fn read_vector(path: &Path) -> Result<Vec<f64>> {
    let m = read_matrix_csv_any(path)?;
    if m.is_empty() {
        return Err(CliError::format(path, "empty vector"));
    }
    Ok(m)
}

fn read_matrix_csv_any(path: &Path) -> Result<Vec<f64>> {
    let mut text = String::new();
    fs::File::open(path).and_then(|mut f| f.read_to_string(&mut text)).map_err(|e| CliError::io(path, e))?;
    text.split(|c: char| c == ',' || c.is_whitespace())
        .filter(|t| !t.is_empty())
        .map(|t| t.parse::<f64>().map_err(|e| CliError::format(path, format!("{}: {:?}", e, t))))
        .collect()
}

#[derive(Debug, Serialize, Deserialize)]
struct ScoreRow {
    label: String,
    score: f64,
}

/// Score CSV with header `label,score`; labels are `genuine` or `impostor`.
pub fn read_scores(path: &Path) -> Result<ScoreSet> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| CliError::format(path, e.to_string()))?;
    let mut set = ScoreSet::default();
    for rec in rdr.deserialize::<ScoreRow>() {
        let r = rec.map_err(|e| CliError::format(path, e.to_string()))?;
        match r.label.as_str() {
            "genuine" => set.genuine_scores.push(r.score),
            "impostor" => set.impostor_scores.push(r.score),
            other => return Err(CliError::format(path, format!("unknown label {:?}", other))),
        }
    }
    Ok(set)
}

pub fn write_scores(path: &Path, set: &ScoreSet) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for (label, list) in [("genuine", &set.genuine_scores), ("impostor", &set.impostor_scores)] {
        for &score in list {
            w.serialize(ScoreRow { label: label.into(), score }).map_err(|e| CliError::format(path, e.to_string()))?;
        }
    }
    let bytes = w.into_inner().map_err(|e| CliError::format(path, e.to_string()))?;
    write_bytes(path, &bytes)
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    if !path.exists() {
        return Err(CliError::MissingCheckpoint(path.to_path_buf()));
    }
    decode_checkpoint(&read_bytes(path)?).map_err(|e| CliError::format(path, e.to_string()))
}

pub fn write_checkpoint(path: &Path, ck: &Checkpoint) -> Result<()> {
    write_bytes(path, &encode_checkpoint(ck))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| CliError::format(path, e.to_string()))?;
    bytes.push(b'\n');
    write_bytes(path, &bytes)
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let bytes = read_bytes(path)?;
    serde_json::from_slice(&bytes).map_err(|e| CliError::format(path, e.to_string()))
}

/// Corpus manifest stored as `corpus.json` next to `wav/` and `plan/`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub spec: CorpusSpec,
    pub speakers: Vec<SpeakerParams>,
    pub held_out: Vec<u32>,
    pub utterances: Vec<UtteranceEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct UtteranceEntry {
    pub id: usize,
    pub speaker_id: u32,
    pub symbols: SymbolSequence,
    pub split: Split,
    pub style: StyleClass,
    pub render_seed: u64,
    pub wav: String,
    pub plan: String,
}

pub const CORPUS_MANIFEST: &str = "corpus.json";

/// Writes the manifest, one WAV and one plan CSV per utterance.
pub fn save_corpus(dir: &Path, corpus: &Corpus) -> Result<PathBuf> {
    let mut entries = Vec::with_capacity(corpus.utterances.len());
    for u in &corpus.utterances {
        let wav = format!("wav/{:04}.wav", u.id);
        let plan = format!("plan/{:04}.csv", u.id);
        write_wav(&dir.join(&wav), &u.waveform)?;
        write_plan(&dir.join(&plan), &u.plan)?;
        entries.push(UtteranceEntry { id: u.id, speaker_id: u.speaker_id, symbols: u.symbols.clone(), split: u.split, style: u.style, render_seed: u.render_seed, wav, plan });
    }
    let manifest = CorpusManifest { spec: corpus.spec.clone(), speakers: corpus.speakers.clone(), held_out: corpus.held_out.clone(), utterances: entries };
    let path = dir.join(CORPUS_MANIFEST);
    write_json(&path, &manifest)?;
    Ok(path)
}

/// Loads a corpus from its manifest (a directory or the `corpus.json` path).
pub fn load_corpus(path: &Path) -> Result<Corpus> {
    let manifest_path = if path.is_dir() { path.join(CORPUS_MANIFEST) } else { path.to_path_buf() };
    let dir = manifest_path.parent().unwrap_or(Path::new(".")).to_path_buf();
    let m: CorpusManifest = read_json(&manifest_path)?;
    let mut utterances = Vec::with_capacity(m.utterances.len());
    for e in m.utterances {
        let waveform = read_wav(&dir.join(&e.wav))?;
        let plan = read_plan(&dir.join(&e.plan))?;
        if plan.symbols() != e.symbols {
            return Err(CliError::format(&dir.join(&e.plan), format!("plan symbols disagree with manifest for utterance {}", e.id)));
        }
        utterances.push(Utterance { id: e.id, speaker_id: e.speaker_id, symbols: e.symbols, plan, waveform, split: e.split, style: e.style, render_seed: e.render_seed });
    }
    Corpus::from_parts(m.spec, m.speakers, utterances, m.held_out).map_err(|e| CliError::format(&manifest_path, e.to_string()))
}

/// Writes any serializable value to an in-memory writer as pretty JSON.
pub fn to_json_string<T: Serialize>(value: &T) -> String {
    let mut out = Vec::new();
    serde_json::to_writer_pretty(&mut out, value).expect("serializable");
    out.write_all(b"\n").expect("in-memory write");
    String::from_utf8(out).expect("utf8 json")
}
