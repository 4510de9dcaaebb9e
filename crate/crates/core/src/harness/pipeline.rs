use std::collections::{BTreeMap, HashMap};
use std::io::Cursor;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::checkpoint::{Checkpoint, RngState};
use super::config::{DataSource, Precision, RunConfig};
use super::plot::{line_chart, Series};
use super::{blob_hash, write_atomic, HarnessError};
use crate::audio::{
    load_wav, log_mel, minmax_normalize, read_feature_cache, read_manifest, resample, write_feature_cache,
    write_manifest, ManifestEntry, MelSpectrogram, Split, Waveform,
};
use crate::metrics::{
    abx_error_with, bitrate, corpus_error_rate, entropy_bits, ls_mse, psnr, reports_to_csv, ssim,
    utterance_mean_error_rate, AbxItem, AbxMode, MetricReport, TokenUnit,
};
use crate::models::{
    encode, train_encoder, train_vocoder, vocoder_generate, Encoder, EncoderTrainer, Sampling, TrainLog,
    TrainRecord, UnitSequence, Vocoder, VocoderCorpus, VocoderItem, VocoderTrainer,
};
use crate::nn::Real;
use crate::schedule::{lr_at, run_lr_range_test};
use crate::synthetic::{frame_labels, generate, write_dataset, ToyAsr};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    Prep,
    Lrrt,
    TrainEncoder,
    TrainVocoder,
    Encode,
    Synth,
    EvalUnits,
    EvalAudio,
    EvalText,
    SchedPreview,
}

impl Command {
    pub const ALL: [Command; 10] = [
        Command::Prep,
        Command::Lrrt,
        Command::TrainEncoder,
        Command::TrainVocoder,
        Command::Encode,
        Command::Synth,
        Command::EvalUnits,
        Command::EvalAudio,
        Command::EvalText,
        Command::SchedPreview,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Command::Prep => "prep",
            Command::Lrrt => "lrrt",
            Command::TrainEncoder => "train-encoder",
            Command::TrainVocoder => "train-vocoder",
            Command::Encode => "encode",
            Command::Synth => "synth",
            Command::EvalUnits => "eval-units",
            Command::EvalAudio => "eval-audio",
            Command::EvalText => "eval-text",
            Command::SchedPreview => "sched-preview",
        }
    }
}

impl FromStr for Command {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Command::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| format!("unknown command `{s}`"))
    }
}

impl std::fmt::Display for Command {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub out_dir: PathBuf,
    /// Continue training from the command's existing checkpoint.
    pub resume: bool,
    /// Stop training before this step (the schedule still spans `total_steps`).
    pub until: Option<u64>,
    /// eval-text: `id<TAB>text` reference file (default `data/references.tsv`).
    pub reference: Option<PathBuf>,
    /// eval-text: hypothesis file in the same format (default: transcribe `synth/` with the toy recogniser).
    pub hypothesis: Option<PathBuf>,
    /// synth: cap on the number of test utterances generated.
    pub max_items: Option<usize>,
}

impl RunOptions {
    pub fn new(out_dir: impl Into<PathBuf>) -> Self {
        Self {
            out_dir: out_dir.into(),
            ..Self::default()
        }
    }
}

/// What a command did: config identity, timing and content hashes of every output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub preset: Option<String>,
    pub config_hash: String,
    pub seed: u64,
    pub precision: Precision,
    pub version: String,
    pub wall_secs: f64,
    /// Output path (relative to the run directory) → content hash.
    pub outputs: BTreeMap<String, String>,
    /// Headline numbers (final loss, metric values, …).
    pub summary: BTreeMap<String, f64>,
}

const DATA: &str = "data";
const ENCODER_CKPT: &str = "encoder/checkpoint.zvck";
const VOCODER_CKPT: &str = "vocoder/checkpoint.zvck";
const UNITS: &str = "units/units.jsonl";
const SYNTH_INDEX: &str = "synth/index.jsonl";

// independent ChaCha streams per purpose
const STREAM_INIT: u64 = 1;
const STREAM_ENC_DATA: u64 = 2;
const STREAM_ENC_NEG: u64 = 3;
const STREAM_VOC_DATA: u64 = 4;
const STREAM_LRRT: u64 = 5;

fn stream(cfg: &RunConfig, s: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(cfg.seed);
    r.set_stream(s);
    r
}

struct Ctx<'a> {
    cfg: &'a RunConfig,
    opts: &'a RunOptions,
    outputs: BTreeMap<String, String>,
    summary: BTreeMap<String, f64>,
}

impl Ctx<'_> {
    fn path(&self, rel: &str) -> PathBuf {
        self.opts.out_dir.join(rel)
    }

    fn require(&self, rel: &str, producer: &'static str) -> Result<PathBuf, HarnessError> {
        let p = self.path(rel);
        if !p.exists() {
            return Err(HarnessError::MissingArtifact { path: p, producer });
        }
        Ok(p)
    }

    fn write(&mut self, rel: &str, bytes: &[u8]) -> Result<(), HarnessError> {
        write_atomic(&self.path(rel), bytes)?;
        self.outputs.insert(rel.to_string(), blob_hash(bytes));
        Ok(())
    }

    /// Record a file some other writer already produced.
    fn record(&mut self, rel: &str) -> Result<(), HarnessError> {
        let bytes = std::fs::read(self.path(rel))?;
        self.outputs.insert(rel.to_string(), blob_hash(&bytes));
        Ok(())
    }
}

/// Run one pipeline command. Outputs go under `opts.out_dir`; a manifest is written to
/// `manifests/<command>.json`.
pub fn run_pipeline(cmd: Command, cfg: &RunConfig, opts: &RunOptions) -> Result<RunManifest, HarnessError> {
    cfg.validate()?;
    let started = Instant::now();
    let mut ctx = Ctx {
        cfg,
        opts,
        outputs: BTreeMap::new(),
        summary: BTreeMap::new(),
    };
    macro_rules! by_precision {
        ($f:ident) => {
            match cfg.precision {
                Precision::F32 => $f::<f32>(&mut ctx),
                Precision::F64 => $f::<f64>(&mut ctx),
            }
        };
    }
    match cmd {
        Command::Prep => prep(&mut ctx),
        Command::Lrrt => by_precision!(lrrt),
        Command::TrainEncoder => by_precision!(train_encoder_cmd),
        Command::TrainVocoder => by_precision!(train_vocoder_cmd),
        Command::Encode => by_precision!(encode_cmd),
        Command::Synth => by_precision!(synth),
        Command::EvalUnits => by_precision!(eval_units),
        Command::EvalAudio => eval_audio(&mut ctx),
        Command::EvalText => eval_text(&mut ctx),
        Command::SchedPreview => sched_preview(&mut ctx),
    }?;
    let manifest = RunManifest {
        command: cmd.name().into(),
        preset: cfg.preset.clone(),
        config_hash: cfg.config_hash(),
        seed: cfg.seed,
        precision: cfg.precision,
        version: env!("CARGO_PKG_VERSION").into(),
        wall_secs: started.elapsed().as_secs_f64(),
        outputs: ctx.outputs,
        summary: ctx.summary,
    };
    write_atomic(
        &opts.out_dir.join(format!("manifests/{}.json", cmd.name())),
        &serde_json::to_vec_pretty(&manifest)?,
    )?;
    Ok(manifest)
}

fn file_stem(id: &str) -> String {
    id.chars()
        .map(|c| if c.is_ascii_alphanumeric() || "-_.".contains(c) { c } else { '_' })
        .collect()
}

fn wav_bytes(w: &Waveform) -> Result<Vec<u8>, HarnessError> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: w.sample_rate(),
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut buf = Cursor::new(Vec::new());
    let mut writer = hound::WavWriter::new(&mut buf, spec).map_err(|e| HarnessError::Data(e.to_string()))?;
    for &s in w.samples() {
        writer
            .write_sample((s.clamp(-1.0, 1.0) * 32767.0).round() as i16)
            .map_err(|e| HarnessError::Data(e.to_string()))?;
    }
    writer.finalize().map_err(|e| HarnessError::Data(e.to_string()))?;
    Ok(buf.into_inner())
}

fn jsonl<T: Serialize>(rows: &[T]) -> Result<Vec<u8>, HarnessError> {
    let mut out = Vec::new();
    for r in rows {
        serde_json::to_writer(&mut out, r)?;
        out.push(b'\n');
    }
    Ok(out)
}

fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, HarnessError> {
    let text = std::fs::read_to_string(path)?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| HarnessError::Data(format!("{}:{}: {e}", path.display(), i + 1)))
        })
        .collect()
}

#[derive(Debug, Serialize, Deserialize)]
struct NormStats {
    min: f64,
    max: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct PhoneLabels {
    id: String,
    phones: Vec<usize>,
}

/// Prepared dataset as written by `prep`.
struct Prepared {
    dir: PathBuf,
    entries: Vec<ManifestEntry>,
    norm: (f64, f64),
    speakers: Vec<String>,
}

impl Prepared {
    fn load(ctx: &Ctx) -> Result<Self, HarnessError> {
        let manifest = ctx.require(&format!("{DATA}/manifest.jsonl"), "prep")?;
        let norm_path = ctx.require(&format!("{DATA}/norm.json"), "prep")?;
        let entries = read_manifest(&manifest)?;
        let norm: NormStats = serde_json::from_slice(&std::fs::read(norm_path)?)?;
        let mut speakers: Vec<String> = entries.iter().map(|e| e.speaker.clone()).collect();
        speakers.sort();
        speakers.dedup();
        Ok(Self {
            dir: ctx.path(DATA),
            entries,
            norm: (norm.min, norm.max),
            speakers,
        })
    }

    fn split(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }

    fn mel(&self, id: &str) -> Result<MelSpectrogram, HarnessError> {
        Ok(read_feature_cache(self.dir.join("features").join(format!("{}.mel", file_stem(id))))?)
    }

    fn audio(&self, e: &ManifestEntry, rate: u32) -> Result<Waveform, HarnessError> {
        let p = Path::new(&e.wav);
        let p = if p.is_absolute() { p.to_path_buf() } else { self.dir.join(p) };
        let w = load_wav(&p)?;
        Ok(if w.sample_rate() == rate { w } else { resample(&w, rate)? })
    }

    fn speaker_index(&self, speaker: &str, n_speakers: usize) -> Result<usize, HarnessError> {
        let i = self.speakers.binary_search_by(|s| s.as_str().cmp(speaker)).expect("speaker from manifest");
        if i >= n_speakers {
            return Err(HarnessError::Data(format!(
                "{} speakers in the data but vocoder.n_speakers = {n_speakers}",
                self.speakers.len()
            )));
        }
        Ok(i)
    }

    fn phones(&self) -> Result<Option<HashMap<String, Vec<usize>>>, HarnessError> {
        let p = self.dir.join("phones.jsonl");
        if !p.exists() {
            return Ok(None);
        }
        let rows: Vec<PhoneLabels> = read_jsonl(&p)?;
        Ok(Some(rows.into_iter().map(|r| (r.id, r.phones)).collect()))
    }
}

fn prep(ctx: &mut Ctx) -> Result<(), HarnessError> {
    let cfg = ctx.cfg;
    let data_dir = ctx.path(DATA);
    let mut phones = None;
    let entries: Vec<ManifestEntry> = match cfg.data.source {
        DataSource::Synthetic => {
            let corpus = generate(&cfg.data.synthetic, cfg.seed);
            let entries = write_dataset(&data_dir, &corpus)?;
            for e in &entries {
                ctx.record(&format!("{DATA}/{}", e.wav))?;
            }
            ctx.record(&format!("{DATA}/phones.jsonl"))?;
            phones = Some(corpus.iter().map(|u| (u.id.clone(), u.phones.clone())).collect::<HashMap<_, _>>());
            entries
        }
        DataSource::Manifest => {
            let src = cfg.data.manifest.as_ref().ok_or_else(|| {
                HarnessError::config("data.manifest", "required when data.source = \"manifest\"".into())
            })?;
            if !src.exists() {
                return Err(HarnessError::MissingArtifact {
                    path: src.clone(),
                    producer: "an external dataset manifest",
                });
            }
            let base = src.parent().map(Path::to_path_buf).unwrap_or_default();
            let mut entries = read_manifest(src)?;
            for e in &mut entries {
                let p = Path::new(&e.wav);
                if p.is_relative() {
                    let abs = std::path::absolute(base.join(p))?;
                    e.wav = abs.to_string_lossy().into_owned();
                }
            }
            entries
        }
    };
    if entries.is_empty() {
        return Err(HarnessError::Data("dataset has no utterances".into()));
    }
    let mut ids: Vec<&str> = entries.iter().map(|e| e.id.as_str()).collect();
    ids.sort_unstable();
    if ids.windows(2).any(|w| w[0] == w[1]) {
        return Err(HarnessError::Data("duplicate utterance ids in manifest".into()));
    }
    write_manifest(data_dir.join("manifest.jsonl"), &entries)?;
    ctx.record(&format!("{DATA}/manifest.jsonl"))?;

    let prepared = Prepared {
        dir: data_dir.clone(),
        entries,
        norm: (0.0, 1.0),
        speakers: Vec::new(),
    };
    let mut logs = Vec::with_capacity(prepared.entries.len());
    for e in &prepared.entries {
        let w = prepared.audio(e, cfg.features.sample_rate)?;
        let m = log_mel(&w, &cfg.features).map_err(|err| HarnessError::Data(format!("{}: {err}", e.id)))?;
        logs.push(m);
    }
    let norm = match cfg.data.norm_stats {
        Some(s) => s,
        None => prepared
            .entries
            .iter()
            .zip(&logs)
            .filter(|(e, _)| e.split == Split::Train)
            .map(|(_, m)| m.min_max())
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), (lo, hi)| (a.min(lo), b.max(hi))),
    };
    if !(norm.0.is_finite() && norm.1.is_finite()) {
        return Err(HarnessError::Data("no train-split utterances to compute normalisation stats".into()));
    }
    ctx.write(&format!("{DATA}/norm.json"), &serde_json::to_vec_pretty(&NormStats { min: norm.0, max: norm.1 })?)?;

    let mut mels = Vec::with_capacity(logs.len());
    for (e, m) in prepared.entries.iter().zip(&logs) {
        let n = minmax_normalize(m, Some(norm))?;
        let rel = format!("{DATA}/features/{}.mel", file_stem(&e.id));
        write_feature_cache(ctx.path(&rel), &n)?;
        ctx.record(&rel)?;
        mels.push(n);
    }

    let mut refs = String::new();
    for e in prepared.split(Split::Test) {
        if let Some(t) = &e.transcript {
            refs.push_str(&format!("{}\t{}\n", e.id, t));
        }
    }
    ctx.write(&format!("{DATA}/references.tsv"), refs.as_bytes())?;

    if let Some(phones) = phones {
        let win = cfg.features.win_length();
        let unit = cfg.data.synthetic.unit_samples;
        let labels: Vec<Vec<usize>> = prepared
            .entries
            .iter()
            .zip(&mels)
            .map(|(e, m)| frame_labels(&phones[&e.id], m.n_frames, cfg.features.hop, win, unit))
            .collect();
        let mut asr = ToyAsr::fit(
            prepared
                .entries
                .iter()
                .zip(mels.iter().zip(&labels))
                .filter(|(e, _)| e.split == Split::Train)
                .map(|(_, (m, l))| (m, l.as_slice())),
        );
        asr.min_run = cfg.eval.asr_min_run;
        ctx.write(&format!("{DATA}/asr.json"), &serde_json::to_vec_pretty(&asr)?)?;
    }
    ctx.summary.insert("utterances".into(), prepared.entries.len() as f64);
    ctx.summary.insert("norm_min".into(), norm.0);
    ctx.summary.insert("norm_max".into(), norm.1);
    Ok(())
}

fn read_log(path: &Path) -> Result<Vec<TrainRecord>, HarnessError> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let mut r = csv::Reader::from_path(path)?;
    let rows: Result<Vec<TrainRecord>, _> = r.deserialize().collect();
    Ok(rows?)
}

fn write_log(ctx: &mut Ctx, dir: &str, title: &str, mut prior: Vec<TrainRecord>, log: &TrainLog) -> Result<(), HarnessError> {
    prior.extend(log.records.iter().cloned());
    let merged = TrainLog {
        records: prior,
        final_val_nll: log.final_val_nll,
        wall_secs: log.wall_secs,
    };
    ctx.write(&format!("{dir}/train_log.csv"), &merged.to_csv()?)?;
    let mut series = vec![Series::new(
        "train loss",
        merged.records.iter().map(|r| (r.step as f64, r.loss)).collect(),
    )];
    let val: Vec<(f64, f64)> = merged
        .records
        .iter()
        .filter_map(|r| r.val_nll.map(|v| (r.step as f64, v)))
        .collect();
    if !val.is_empty() {
        series.push(Series::new("validation NLL", val));
    }
    let svg = line_chart(title, "step", "loss", &series, false);
    ctx.write(&format!("{dir}/loss.svg"), svg.as_bytes())?;
    if let Some(last) = merged.records.last() {
        ctx.summary.insert("final_loss".into(), last.loss);
        ctx.summary.insert("steps".into(), (last.step + 1) as f64);
    }
    if let Some(v) = log.final_val_nll {
        ctx.summary.insert("final_val_nll".into(), v);
    }
    ctx.summary.insert("train_wall_secs".into(), log.wall_secs);
    Ok(())
}

fn train_mels(ctx: &Ctx, data: &Prepared) -> Result<Vec<MelSpectrogram>, HarnessError> {
    let frames = ctx.cfg.train.encoder.frames;
    let mut mels = Vec::new();
    for e in data.split(Split::Train) {
        let m = data.mel(&e.id)?;
        if m.n_frames >= frames {
            mels.push(m);
        }
    }
    if mels.is_empty() {
        return Err(HarnessError::Data(format!("no train utterance has {frames} frames")));
    }
    Ok(mels)
}

fn new_encoder_trainer<T: Real>(cfg: &RunConfig) -> Result<EncoderTrainer<T>, HarnessError> {
    let enc = Encoder::<T>::new(&cfg.encoder, &mut stream(cfg, STREAM_INIT))?;
    Ok(EncoderTrainer::new(enc, cfg.train.encoder.clip_norm, stream(cfg, STREAM_ENC_NEG)))
}

fn load_encoder<T: Real>(ctx: &Ctx) -> Result<(EncoderTrainer<T>, Checkpoint), HarnessError> {
    let path = ctx.require(ENCODER_CKPT, "train-encoder")?;
    let ck = Checkpoint::load(&path)?;
    ck.expect_kind("encoder")?;
    let mut tr = new_encoder_trainer::<T>(ctx.cfg)?;
    ck.restore_module(&mut tr.encoder, &mut tr.adam)?;
    tr.step = ck.step;
    if let Some(r) = ck.rng.get("negatives") {
        tr.rng = r.restore()?;
    }
    let cb = &mut tr.encoder.codebook;
    for (key, dst) in [("codebook_usage", &mut cb.usage), ("codebook_idle", &mut cb.idle)] {
        if let Some(v) = ck.counters.get(key) {
            if v.len() == dst.len() {
                dst.copy_from_slice(v);
            }
        }
    }
    Ok((tr, ck))
}

fn train_encoder_cmd<T: Real>(ctx: &mut Ctx) -> Result<(), HarnessError> {
    let cfg = ctx.cfg;
    let data = Prepared::load(ctx)?;
    let mels = train_mels(ctx, &data)?;
    let resume = ctx.opts.resume && ctx.path(ENCODER_CKPT).exists();
    let (mut tr, mut rng, prior) = if resume {
        let (tr, ck) = load_encoder::<T>(ctx)?;
        let rng = ck.rng.get("data").map(RngState::restore).transpose()?.unwrap_or_else(|| stream(cfg, STREAM_ENC_DATA));
        (tr, rng, read_log(&ctx.path("encoder/train_log.csv"))?)
    } else {
        (new_encoder_trainer::<T>(cfg)?, stream(cfg, STREAM_ENC_DATA), Vec::new())
    };
    let until = ctx.opts.until.unwrap_or(u64::MAX);
    let log = train_encoder(&mut tr, &mels, &cfg.scheduler.encoder, &cfg.train.encoder, &mut rng, until)?;

    let mut ck = Checkpoint::new("encoder", tr.step, cfg);
    ck.capture_module(&tr.encoder, &tr.adam);
    ck.rng.insert("data".into(), RngState::capture(&rng));
    ck.rng.insert("negatives".into(), RngState::capture(&tr.rng));
    ck.counters.insert("codebook_usage".into(), tr.encoder.codebook.usage.clone());
    ck.counters.insert("codebook_idle".into(), tr.encoder.codebook.idle.clone());
    ctx.write(ENCODER_CKPT, &ck.to_bytes())?;
    write_log(ctx, "encoder", "encoder training", prior, &log)?;
    if let Some(acc) = log.records.last().and_then(|r| r.accuracy) {
        ctx.summary.insert("final_accuracy".into(), acc);
    }
    Ok(())
}

fn encode_cmd<T: Real>(ctx: &mut Ctx) -> Result<(), HarnessError> {
    let cfg = ctx.cfg;
    let data = Prepared::load(ctx)?;
    let (tr, _) = load_encoder::<T>(ctx)?;
    let frame_rate = cfg.features.sample_rate as f64 / (2 * cfg.features.hop) as f64;
    let mut rows = Vec::with_capacity(data.entries.len());
    for e in &data.entries {
        let mel = data.mel(&e.id)?;
        let (_, indices) = encode(&tr.encoder, &mel).map_err(|err| HarnessError::Data(format!("{}: {err}", e.id)))?;
        rows.push(UnitSequence {
            id: e.id.clone(),
            speaker: e.speaker.clone(),
            indices,
            frame_rate,
        });
    }
    let used = {
        let mut all: Vec<usize> = rows.iter().flat_map(|r| r.indices.iter().copied()).collect();
        all.sort_unstable();
        all.dedup();
        all.len()
    };
    ctx.summary.insert("codes_used".into(), used as f64);
    ctx.write(UNITS, &jsonl(&rows)?)
}

fn load_units(ctx: &Ctx) -> Result<HashMap<String, UnitSequence>, HarnessError> {
    let rows: Vec<UnitSequence> = read_jsonl(&ctx.require(UNITS, "encode")?)?;
    Ok(rows.into_iter().map(|u| (u.id.clone(), u)).collect())
}

fn vocoder_corpus(ctx: &Ctx, data: &Prepared, units: &HashMap<String, UnitSequence>, split: Split) -> Result<Option<VocoderCorpus>, HarnessError> {
    let vc = &ctx.cfg.vocoder;
    let mut items = Vec::new();
    for e in data.split(split) {
        let u = units
            .get(&e.id)
            .ok_or_else(|| HarnessError::Data(format!("no units for utterance {}", e.id)))?;
        items.push(VocoderItem {
            id: e.id.clone(),
            units: u.indices.clone(),
            speaker: data.speaker_index(&e.speaker, vc.n_speakers)?,
            audio: data.audio(e, vc.sample_rate)?.into_samples(),
        });
    }
    if items.is_empty() {
        return Ok(None);
    }
    Ok(Some(VocoderCorpus::new(items, vc.samples_per_unit(), vc.mu_channels)?))
}

fn new_vocoder_trainer<T: Real>(cfg: &RunConfig) -> Result<VocoderTrainer<T>, HarnessError> {
    let v = Vocoder::<T>::new(&cfg.vocoder, &mut stream(cfg, STREAM_INIT))?;
    Ok(VocoderTrainer::new(v, cfg.train.vocoder.clip_norm))
}

fn load_vocoder<T: Real>(ctx: &Ctx) -> Result<(VocoderTrainer<T>, Checkpoint), HarnessError> {
    let path = ctx.require(VOCODER_CKPT, "train-vocoder")?;
    let ck = Checkpoint::load(&path)?;
    ck.expect_kind("vocoder")?;
    let mut tr = new_vocoder_trainer::<T>(ctx.cfg)?;
    ck.restore_module(&mut tr.vocoder, &mut tr.adam)?;
    tr.step = ck.step;
    Ok((tr, ck))
}

fn lrrt<T: Real>(ctx: &mut Ctx) -> Result<(), HarnessError> {
    let cfg = ctx.cfg;
    let data = Prepared::load(ctx)?;
    let units = load_units(ctx)?;
    let corpus = vocoder_corpus(ctx, &data, &units, Split::Train)?
        .ok_or_else(|| HarnessError::Data("no train utterances".into()))?;
    let mut tr = new_vocoder_trainer::<T>(cfg)?;
    let mut rng = stream(cfg, STREAM_LRRT);
    let (batch, n_units) = (cfg.train.vocoder.batch_size, cfg.train.vocoder.frames / 2);
    corpus.sample_batch(batch, n_units, &mut rng.clone())?;
    let batches = std::iter::from_fn(|| corpus.sample_batch(batch, n_units, &mut rng).ok());
    let report = run_lr_range_test(&mut tr, batches, &cfg.scheduler.lrrt)?;
    ctx.write("lrrt/lrrt.csv", &report.to_csv()?)?;
    ctx.write("lrrt/summary.json", &serde_json::to_vec_pretty(&report.summary())?)?;
    let series = [
        Series::new("smoothed loss", report.records.iter().map(|r| (r.lr, r.smoothed_loss)).collect()),
        Series::new("raw loss", report.records.iter().map(|r| (r.lr, r.raw_loss)).collect()),
    ];
    let svg = line_chart("LR range test", "learning rate", "loss", &series, true);
    ctx.write("lrrt/lrrt.svg", svg.as_bytes())?;
    ctx.summary.insert("suggested_max_lr".into(), report.suggested_max_lr);
    if let Some(x) = report.explosion_lr {
        ctx.summary.insert("explosion_lr".into(), x);
    }
    Ok(())
}

fn train_vocoder_cmd<T: Real>(ctx: &mut Ctx) -> Result<(), HarnessError> {
    let cfg = ctx.cfg;
    let data = Prepared::load(ctx)?;
    let units = load_units(ctx)?;
    let train = vocoder_corpus(ctx, &data, &units, Split::Train)?
        .ok_or_else(|| HarnessError::Data("no train utterances".into()))?;
    let val = vocoder_corpus(ctx, &data, &units, Split::Val)?;
    let resume = ctx.opts.resume && ctx.path(VOCODER_CKPT).exists();
    let (mut tr, mut rng, prior) = if resume {
        let (tr, ck) = load_vocoder::<T>(ctx)?;
        let rng = ck.rng.get("data").map(RngState::restore).transpose()?.unwrap_or_else(|| stream(cfg, STREAM_VOC_DATA));
        (tr, rng, read_log(&ctx.path("vocoder/train_log.csv"))?)
    } else {
        (new_vocoder_trainer::<T>(cfg)?, stream(cfg, STREAM_VOC_DATA), Vec::new())
    };
    let until = ctx.opts.until.unwrap_or(u64::MAX);
    let log = train_vocoder(&mut tr, &train, val.as_ref(), &cfg.scheduler.vocoder, &cfg.train.vocoder, &mut rng, until)?;
    let mut ck = Checkpoint::new("vocoder", tr.step, cfg);
    ck.capture_module(&tr.vocoder, &tr.adam);
    ck.rng.insert("data".into(), RngState::capture(&rng));
    ctx.write(VOCODER_CKPT, &ck.to_bytes())?;
    write_log(ctx, "vocoder", "vocoder training", prior, &log)
}

#[derive(Debug, Serialize, Deserialize)]
struct SynthRow {
    id: String,
    speaker: String,
    wav: String,
    samples: usize,
}

fn synth<T: Real>(ctx: &mut Ctx) -> Result<(), HarnessError> {
    let cfg = ctx.cfg;
    let data = Prepared::load(ctx)?;
    let units = load_units(ctx)?;
    let (tr, _) = load_vocoder::<T>(ctx)?;
    let sampling = match cfg.eval.temperature {
        Some(t) => Sampling::Temperature(t),
        None => Sampling::Argmax,
    };
    let limit = ctx.opts.max_items.unwrap_or(usize::MAX);
    let mut rows = Vec::new();
    for (i, e) in data.split(Split::Test).take(limit).enumerate() {
        let u = units
            .get(&e.id)
            .ok_or_else(|| HarnessError::Data(format!("no units for utterance {}", e.id)))?;
        let speaker = data.speaker_index(&e.speaker, cfg.vocoder.n_speakers)?;
        let w = vocoder_generate(&tr.vocoder, &u.indices, speaker, sampling, cfg.seed.wrapping_add(i as u64))?;
        let rel = format!("synth/wav/{}.wav", file_stem(&e.id));
        ctx.write(&rel, &wav_bytes(&w)?)?;
        rows.push(SynthRow {
            id: e.id.clone(),
            speaker: e.speaker.clone(),
            wav: rel,
            samples: w.len(),
        });
    }
    if rows.is_empty() {
        return Err(HarnessError::Data("no test-split utterances to synthesise".into()));
    }
    ctx.summary.insert("utterances".into(), rows.len() as f64);
    ctx.write(SYNTH_INDEX, &jsonl(&rows)?)
}

fn write_reports(ctx: &mut Ctx, rel: &str, reports: &[MetricReport]) -> Result<(), HarnessError> {
    for r in reports {
        ctx.summary.insert(r.metric.clone(), r.value);
    }
    ctx.write(rel, &reports_to_csv(reports)?)
}

/// Contiguous runs of one non-silence phone, as `(phone, first unit, end unit)`.
fn phone_segments(phones: &[usize], n_units: usize) -> Vec<(usize, usize, usize)> {
    let mut out = Vec::new();
    let mut i = 0;
    let n = phones.len().min(n_units);
    while i < n {
        let p = phones[i];
        let run = phones[i..n].iter().take_while(|&&q| q == p).count();
        if p != crate::synthetic::SILENCE {
            out.push((p, i, i + run));
        }
        i += run;
    }
    out
}

fn eval_units<T: Real>(ctx: &mut Ctx) -> Result<(), HarnessError> {
    let cfg = ctx.cfg;
    let data = Prepared::load(ctx)?;
    let units = load_units(ctx)?;
    let test: Vec<&UnitSequence> = data.split(Split::Test).filter_map(|e| units.get(&e.id)).collect();
    if test.is_empty() {
        return Err(HarnessError::Data("no test-split unit sequences".into()));
    }
    let seqs: Vec<Vec<usize>> = test.iter().map(|u| u.indices.clone()).collect();
    let duration: f64 = test.iter().map(|u| u.duration_secs()).sum();
    let rate = bitrate(&seqs, duration, cfg.eval.collapse_runs)?;
    let (h, n) = entropy_bits(seqs.iter().flatten().copied());
    let settings = format!("collapse_runs={}", cfg.eval.collapse_runs);
    let mut reports = vec![
        MetricReport::new("bitrate", rate, "bits/s", test.len(), &settings),
        MetricReport::new("unit_entropy", h, "bits", n, &settings),
    ];

    if let Some(phones) = data.phones()? {
        let (tr, _) = load_encoder::<T>(ctx)?;
        let dim = cfg.encoder.context_dim;
        let mut items = Vec::new();
        for e in data.entries.iter().filter(|e| e.split != Split::Train) {
            let (ctx_feats, _) = encode(&tr.encoder, &data.mel(&e.id)?)?;
            let feats: Vec<f64> = ctx_feats.data().iter().map(|v| v.f64()).collect();
            let n_units = feats.len() / dim;
            for (p, a, b) in phone_segments(&phones[&e.id], n_units) {
                items.push(AbxItem {
                    features: feats[a * dim..b * dim].to_vec(),
                    dim,
                    category: p.to_string(),
                    speaker: e.speaker.clone(),
                });
            }
        }
        let abx = &cfg.eval.abx;
        let settings = format!("metric={:?} max_triplets={} seed={}", abx.metric, abx.max_triplets, abx.seed).to_lowercase();
        for (name, mode) in [("abx_within", AbxMode::Within), ("abx_across", AbxMode::Across)] {
            let v = abx_error_with(&items, mode, abx)?;
            reports.push(MetricReport::new(name, v, "%", items.len(), &settings));
        }
    }
    write_reports(ctx, "eval/units.csv", &reports)
}

fn eval_audio(ctx: &mut Ctx) -> Result<(), HarnessError> {
    let cfg = ctx.cfg;
    let data = Prepared::load(ctx)?;
    let rows: Vec<SynthRow> = read_jsonl(&ctx.require(SYNTH_INDEX, "synth")?)?;
    let by_id: HashMap<&str, &ManifestEntry> = data.entries.iter().map(|e| (e.id.as_str(), e)).collect();
    let (mut mse, mut pk, mut ss) = (Vec::new(), Vec::new(), Vec::new());
    for r in &rows {
        let e = by_id
            .get(r.id.as_str())
            .ok_or_else(|| HarnessError::Data(format!("synthesised id {} not in manifest", r.id)))?;
        let gen = load_wav(ctx.require(&r.wav, "synth")?)?;
        let orig = data.audio(e, cfg.features.sample_rate)?;
        let n = gen.len().min(orig.len());
        let cut = |w: &Waveform| Waveform::new(w.samples()[..n].to_vec(), w.sample_rate());
        let mel = |w: Waveform| -> Result<MelSpectrogram, HarnessError> {
            Ok(minmax_normalize(&log_mel(&w, &cfg.features)?, Some(data.norm))?)
        };
        let (a, b) = (mel(cut(&orig)?)?, mel(cut(&gen)?)?);
        mse.push(ls_mse(&a, &b)?);
        pk.push(psnr(&a, &b, cfg.eval.psnr_peak)?);
        ss.push(ssim(&a, &b)?);
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let n = rows.len();
    let reports = [
        MetricReport::new("ls_mse", mean(&mse), "normalised log-mel", n, "minmax"),
        MetricReport::new("psnr", mean(&pk), "dB", n, &format!("peak={}", cfg.eval.psnr_peak)),
        MetricReport::new("ssim", mean(&ss), "", n, "window=7x7 sigma=1.5"),
    ];
    write_reports(ctx, "eval/audio.csv", &reports)
}

fn read_tsv(path: &Path) -> Result<Vec<(String, String)>, HarnessError> {
    let text = std::fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (id, t) = line
            .split_once('\t')
            .ok_or_else(|| HarnessError::Data(format!("{}:{}: expected `id<TAB>text`", path.display(), i + 1)))?;
        out.push((id.to_string(), t.trim().to_string()));
    }
    Ok(out)
}

/// One symbol per letter: the bundled corpus spells every phone with one letter.
fn letters_as_phones(text: &str) -> String {
    text.chars().filter(|c| !c.is_whitespace()).map(String::from).collect::<Vec<_>>().join(" ")
}

fn eval_text(ctx: &mut Ctx) -> Result<(), HarnessError> {
    let ref_path = match &ctx.opts.reference {
        Some(p) => p.clone(),
        None => ctx.require(&format!("{DATA}/references.tsv"), "prep")?,
    };
    let refs = read_tsv(&ref_path)?;
    if refs.is_empty() {
        return Err(HarnessError::Data(format!("reference file {} is empty", ref_path.display())));
    }
    let hyps: HashMap<String, String> = match &ctx.opts.hypothesis {
        Some(p) => read_tsv(p)?.into_iter().collect(),
        None => {
            let asr: ToyAsr = serde_json::from_slice(&std::fs::read(ctx.require(&format!("{DATA}/asr.json"), "prep")?)?)?;
            let data = Prepared::load(ctx)?;
            let rows: Vec<SynthRow> = read_jsonl(&ctx.require(SYNTH_INDEX, "synth")?)?;
            let mut out = HashMap::new();
            for r in rows {
                let w = load_wav(ctx.path(&r.wav))?;
                let mel = minmax_normalize(&log_mel(&w, &ctx.cfg.features)?, Some(data.norm))?;
                out.insert(r.id, asr.transcribe(&mel));
            }
            out
        }
    };
    let pairs: Vec<(&str, &str)> = refs
        .iter()
        .filter_map(|(id, r)| hyps.get(id).map(|h| (r.as_str(), h.as_str())))
        .collect();
    if pairs.is_empty() {
        return Err(HarnessError::Data("no hypothesis matches a reference id".into()));
    }
    let phone_pairs: Vec<(String, String)> = pairs.iter().map(|(r, h)| (letters_as_phones(r), letters_as_phones(h))).collect();
    let phone_refs: Vec<(&str, &str)> = phone_pairs.iter().map(|(r, h)| (r.as_str(), h.as_str())).collect();
    let n = pairs.len();
    let mut reports = Vec::new();
    for (name, unit, set) in [
        ("cer", TokenUnit::Char, &pairs),
        ("wer", TokenUnit::Word, &pairs),
        ("per", TokenUnit::Phoneme, &phone_refs),
    ] {
        reports.push(MetricReport::new(name, corpus_error_rate(set, unit)?, "%", n, "pooled"));
        reports.push(MetricReport::new(
            &format!("{name}_utterance_mean"),
            utterance_mean_error_rate(set, unit)?,
            "%",
            n,
            "per-utterance mean",
        ));
    }
    let mut hyp_tsv = String::new();
    for (id, _) in &refs {
        if let Some(h) = hyps.get(id) {
            hyp_tsv.push_str(&format!("{id}\t{h}\n"));
        }
    }
    ctx.write("eval/hypotheses.tsv", hyp_tsv.as_bytes())?;
    write_reports(ctx, "eval/text.csv", &reports)
}

fn sched_preview(ctx: &mut Ctx) -> Result<(), HarnessError> {
    let s = &ctx.cfg.scheduler.vocoder;
    let total = s.total_steps;
    let grid = 2000u64.min(total);
    let mut steps: Vec<u64> = (0..=grid).map(|i| i * total / grid.max(1)).collect();
    for b in s.breakpoints() {
        steps.push(b);
        steps.push(b.saturating_sub(1));
    }
    steps.sort_unstable();
    steps.dedup();
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["step", "lr"])?;
    let mut pts = Vec::with_capacity(steps.len());
    let mut max = f64::NEG_INFINITY;
    for &st in &steps {
        let lr = lr_at(s, st)?;
        max = max.max(lr);
        w.write_record([st.to_string(), format!("{lr:e}")])?;
        pts.push((st as f64, lr));
    }
    let bytes = w.into_inner().map_err(|e| HarnessError::Io(e.into_error()))?;
    ctx.write("sched/schedule.csv", &bytes)?;
    let svg = line_chart(&format!("{:?} schedule", s.kind), "step", "learning rate", &[Series::new("lr", pts)], false);
    ctx.write("sched/schedule.svg", svg.as_bytes())?;
    ctx.summary.insert("max_lr".into(), max);
    ctx.summary.insert("final_lr".into(), lr_at(s, total)?);
    Ok(())
}
