use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::audio::FeatureConfig;
use crate::metrics::AbxConfig;
use crate::models::{EncoderConfig, TrainConfig, VocoderConfig};
use crate::schedule::{LrrtConfig, ScheduleConfig};
use crate::synthetic::SyntheticConfig;
use crate::upsample::{validate_scale_chain, ScaleChain, Upsampler};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    #[default]
    F32,
    F64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataSource {
    /// Generate the bundled tone-pair corpus.
    Synthetic,
    /// Read a JSON Lines manifest of PCM16 WAV files.
    Manifest,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub source: DataSource,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub manifest: Option<PathBuf>,
    #[serde(default)]
    pub synthetic: SyntheticConfig,
    /// Fixed log-mel `(min, max)` for normalisation; computed from the train split when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub norm_stats: Option<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchedulerSection {
    pub vocoder: ScheduleConfig,
    pub encoder: ScheduleConfig,
    pub lrrt: LrrtConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub encoder: TrainConfig,
    pub vocoder: TrainConfig,
}

fn default_peak() -> f64 {
    1.0
}
fn default_min_run() -> usize {
    3
}
fn default_temperature() -> Option<f64> {
    Some(1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    #[serde(default)]
    pub abx: AbxConfig,
    /// Peak value for PSNR on normalised spectrograms.
    #[serde(default = "default_peak")]
    pub psnr_peak: f64,
    #[serde(default)]
    pub collapse_runs: bool,
    /// Minimum run length kept by the toy recogniser.
    #[serde(default = "default_min_run")]
    pub asr_min_run: usize,
    /// Sampling temperature for synthesis; absent means argmax decoding.
    #[serde(default = "default_temperature")]
    pub temperature: Option<f64>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            abx: AbxConfig::default(),
            psnr_peak: default_peak(),
            collapse_runs: false,
            asr_min_run: default_min_run(),
            temperature: default_temperature(),
        }
    }
}

/// Everything one run needs; each section maps onto a module's own config type.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    pub seed: u64,
    #[serde(default)]
    pub precision: Precision,
    /// Worker threads for parallel metrics; 0 uses all cores.
    #[serde(default)]
    pub threads: usize,
    pub data: DataConfig,
    pub features: FeatureConfig,
    pub encoder: EncoderConfig,
    pub vocoder: VocoderConfig,
    pub scheduler: SchedulerSection,
    pub train: TrainSection,
    #[serde(default)]
    pub eval: EvalConfig,
}

pub const PRESETS: [&str; 20] = [
    "toy",
    "baseline",
    "table1-baseline",
    "table1-oclr-30k",
    "table1-oclr-60k",
    "table2-row1",
    "table2-row2",
    "table2-row3",
    "table2-row4",
    "table2-row5",
    "fourier-en",
    "best-en",
    "tamil-baseline",
    "tamil-16-20",
    "tamil-fourier",
    "tamil-best",
    "bengali-baseline",
    "bengali-fourier",
    "bengali-best",
    "hifi-24k",
];

const FULL_PEAK_LR: f64 = 4e-3;
const ENGLISH_SPEAKERS: usize = 102;
const TAMIL_SPEAKERS: usize = 112;
const BENGALI_SPEAKERS: usize = 500;

#[derive(Clone, Copy)]
enum Sched {
    Multistep160k,
    Oclr(u64),
}

struct Geometry {
    s1: usize,
    s2: usize,
    hop: usize,
    frames: usize,
    up: Upsampler,
}

const BASELINE: Geometry = Geometry { s1: 2, s2: 160, hop: 160, frames: 32, up: Upsampler::Nearest };
const BALANCED: Geometry = Geometry { s1: 16, s2: 20, hop: 160, frames: 32, up: Upsampler::Nearest };
const FOURIER: Geometry = Geometry { s1: 16, s2: 16, hop: 128, frames: 64, up: Upsampler::FourierTile };
const BEST: Geometry = Geometry { s1: 10, s2: 16, hop: 80, frames: 102, up: Upsampler::Nearest };

fn full_preset(name: &str, g: Geometry, sched: Sched, speakers: usize) -> RunConfig {
    let features = FeatureConfig::speech_16k(g.hop);
    let encoder = EncoderConfig::full();
    let vocoder = VocoderConfig::full(
        ScaleChain::new(g.s1, g.s2, g.hop),
        [g.up, g.up],
        encoder.codebook_size,
        speakers,
    );
    let vocoder_sched = match sched {
        Sched::Multistep160k => ScheduleConfig::multistep_baseline(),
        Sched::Oclr(steps) => ScheduleConfig::one_cycle(FULL_PEAK_LR, steps),
    };
    RunConfig {
        preset: Some(name.into()),
        seed: 0,
        precision: Precision::F32,
        threads: 0,
        data: DataConfig {
            source: DataSource::Manifest,
            manifest: None,
            synthetic: SyntheticConfig::default(),
            norm_stats: None,
        },
        features,
        encoder,
        vocoder,
        scheduler: SchedulerSection {
            encoder: vocoder_sched.clone(),
            vocoder: vocoder_sched,
            lrrt: LrrtConfig::default(),
        },
        train: TrainSection {
            encoder: TrainConfig::new(32, 128),
            vocoder: TrainConfig::new(32, g.frames),
        },
        eval: EvalConfig::default(),
    }
}

/// CPU-scale configuration on the bundled synthetic corpus.
pub fn toy_config() -> RunConfig {
    let features = FeatureConfig::toy();
    let encoder = EncoderConfig::toy(features.n_mels);
    let synthetic = SyntheticConfig::default();
    let vocoder = VocoderConfig::toy(encoder.codebook_size, synthetic.pitch_factors.len());
    let mut enc_train = TrainConfig::new(8, 32);
    enc_train.log_every = 20;
    let mut voc_train = TrainConfig::new(8, 16);
    voc_train.log_every = 20;
    voc_train.val_every = 100;
    RunConfig {
        preset: Some("toy".into()),
        seed: 0,
        precision: Precision::F32,
        threads: 0,
        data: DataConfig {
            source: DataSource::Synthetic,
            manifest: None,
            synthetic,
            norm_stats: Some((-23.0, 3.0)),
        },
        features,
        encoder,
        vocoder,
        scheduler: SchedulerSection {
            encoder: ScheduleConfig::one_cycle(1e-2, 300),
            vocoder: ScheduleConfig::one_cycle(3e-2, 300),
            lrrt: LrrtConfig {
                start_lr: 1e-5,
                end_lr: 1.0,
                step_rate: 5,
                total_steps: 300,
                ..LrrtConfig::default()
            },
        },
        train: TrainSection {
            encoder: enc_train,
            vocoder: voc_train,
        },
        eval: EvalConfig {
            abx: AbxConfig {
                max_triplets: 20_000,
                ..AbxConfig::default()
            },
            ..EvalConfig::default()
        },
    }
}

impl RunConfig {
    /// Expand a named preset.
    pub fn preset(name: &str) -> Result<Self, HarnessError> {
        use Sched::*;
        let cfg = match name {
            "toy" => toy_config(),
            "baseline" | "table1-baseline" => full_preset(name, BASELINE, Multistep160k, ENGLISH_SPEAKERS),
            "table1-oclr-30k" | "table2-row1" => full_preset(name, BALANCED, Oclr(30_000), ENGLISH_SPEAKERS),
            "table2-row2" => full_preset(name, BALANCED, Oclr(40_000), ENGLISH_SPEAKERS),
            "table1-oclr-60k" | "table2-row3" => full_preset(name, BALANCED, Oclr(60_000), ENGLISH_SPEAKERS),
            "table2-row4" | "fourier-en" => full_preset(name, FOURIER, Oclr(60_000), ENGLISH_SPEAKERS),
            "table2-row5" | "best-en" => full_preset(name, BEST, Oclr(60_000), ENGLISH_SPEAKERS),
            "tamil-baseline" => full_preset(name, BASELINE, Multistep160k, TAMIL_SPEAKERS),
            "tamil-16-20" => full_preset(name, BALANCED, Oclr(60_000), TAMIL_SPEAKERS),
            "tamil-fourier" => full_preset(name, FOURIER, Oclr(60_000), TAMIL_SPEAKERS),
            "tamil-best" => full_preset(name, BEST, Oclr(60_000), TAMIL_SPEAKERS),
            "bengali-baseline" => full_preset(name, BASELINE, Multistep160k, BENGALI_SPEAKERS),
            "bengali-fourier" => full_preset(name, FOURIER, Oclr(60_000), BENGALI_SPEAKERS),
            "bengali-best" => full_preset(name, BEST, Oclr(60_000), BENGALI_SPEAKERS),
            "hifi-24k" => {
                let mut c = full_preset(
                    name,
                    Geometry { s1: 20, s2: 30, hop: 300, frames: 32, up: Upsampler::Nearest },
                    Oclr(60_000),
                    ENGLISH_SPEAKERS,
                );
                c.features = FeatureConfig::speech_24k();
                c.vocoder.sample_rate = 24_000;
                c
            }
            other => {
                return Err(HarnessError::config(
                    "preset",
                    format!("unknown preset `{other}`; known: {}", PRESETS.join(", ")),
                ))
            }
        };
        Ok(cfg)
    }

    /// Cross-field checks; errors carry the offending field path.
    pub fn validate(&self) -> Result<(), HarnessError> {
        let err = |path: &str, msg: String| Err(HarnessError::config(path, msg));
        if let Err(e) = self.features.validate() {
            return err("features", e.to_string());
        }
        if let Err(e) = validate_scale_chain(&self.vocoder.chain) {
            return err("vocoder.chain", e.to_string());
        }
        if self.vocoder.chain.hop != self.features.hop {
            return err(
                "vocoder.chain.hop",
                format!("{} differs from features.hop {}", self.vocoder.chain.hop, self.features.hop),
            );
        }
        if self.vocoder.sample_rate != self.features.sample_rate {
            return err(
                "vocoder.sample_rate",
                format!("{} differs from features.sample_rate {}", self.vocoder.sample_rate, self.features.sample_rate),
            );
        }
        if self.encoder.n_mels != self.features.n_mels {
            return err(
                "encoder.n_mels",
                format!("{} differs from features.n_mels {}", self.encoder.n_mels, self.features.n_mels),
            );
        }
        if self.vocoder.n_codes != self.encoder.codebook_size {
            return err(
                "vocoder.n_codes",
                format!("{} differs from encoder.codebook_size {}", self.vocoder.n_codes, self.encoder.codebook_size),
            );
        }
        if let Err(e) = self.encoder.validate() {
            return err("encoder", e.to_string());
        }
        if let Err(e) = self.vocoder.validate() {
            return err("vocoder", e.to_string());
        }
        for (path, tc) in [("train.encoder", &self.train.encoder), ("train.vocoder", &self.train.vocoder)] {
            if let Err(e) = tc.validate() {
                return err(path, e.to_string());
            }
        }
        let frames = self.train.vocoder.frames;
        if frames % 2 != 0 {
            return err("train.vocoder.frames", format!("{frames} must be even (two mel frames per unit)"));
        }
        if frames * self.features.hop < self.features.win_length() {
            return err(
                "train.vocoder.frames",
                format!("window of {frames} frames × hop {} is shorter than one analysis window", self.features.hop),
            );
        }
        if unit_count(self.train.encoder.frames) <= self.encoder.horizon {
            return err(
                "train.encoder.frames",
                format!(
                    "{} frames give {} units, need more than horizon {}",
                    self.train.encoder.frames,
                    unit_count(self.train.encoder.frames),
                    self.encoder.horizon
                ),
            );
        }
        for (path, s) in [("scheduler.vocoder", &self.scheduler.vocoder), ("scheduler.encoder", &self.scheduler.encoder)] {
            if s.total_steps == 0 {
                return err(&format!("{path}.total_steps"), "must be > 0".into());
            }
            if let Err(e) = s.validate() {
                return err(path, e.to_string());
            }
        }
        if let Some(t) = self.eval.temperature {
            if !(t > 0.0) {
                return err("eval.temperature", format!("{t} must be > 0"));
            }
        }
        if self.data.source == DataSource::Synthetic
            && self.data.synthetic.unit_samples != self.vocoder.samples_per_unit()
        {
            return err(
                "data.synthetic.unit_samples",
                format!("{} differs from 2·hop = {}", self.data.synthetic.unit_samples, self.vocoder.samples_per_unit()),
            );
        }
        Ok(())
    }

    /// Short content hash of the serialised config.
    pub fn config_hash(&self) -> String {
        super::sha256_hex(&serde_json::to_vec(self).expect("config serialises"))[..16].to_string()
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises to TOML")
    }

    /// Parse TOML text. A top-level `preset` key selects the base configuration (default
    /// `toy`); every other key overrides it. Unknown keys are rejected.
    pub fn from_toml_str(text: &str) -> Result<Self, HarnessError> {
        let user: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| HarnessError::config("<toml>", e.message().to_string()))?;
        let preset = match user.get("preset") {
            None => "toy".to_string(),
            Some(toml::Value::String(s)) => s.clone(),
            Some(_) => return Err(HarnessError::config("preset", "must be a string".into())),
        };
        Self::from_table(Self::preset(&preset)?, user)
    }

    /// Apply a table of overrides onto `base`, then validate.
    pub fn from_table(base: RunConfig, overrides: toml::Table) -> Result<Self, HarnessError> {
        let mut merged = toml::Table::try_from(&base).expect("config serialises to TOML");
        merge(&mut merged, overrides);
        let cfg: RunConfig = serde_path_to_error::deserialize(toml::Value::Table(merged)).map_err(|e| {
            let path = e.path().to_string();
            HarnessError::config(&path, e.into_inner().message().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Set both upsampling stages.
    pub fn with_upsampler(mut self, up: Upsampler) -> Self {
        self.vocoder.upsamplers = [up, up];
        self
    }
}

fn unit_count(frames: usize) -> usize {
    crate::models::Encoder::<f32>::output_len(frames)
}

fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

/// Read and validate a TOML run configuration.
pub fn parse_config(path: &Path) -> Result<RunConfig, HarnessError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| HarnessError::config("--config", format!("{}: {e}", path.display())))?;
    RunConfig::from_toml_str(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_preset_validates() {
        for name in PRESETS {
            let cfg = RunConfig::preset(name).unwrap();
            cfg.validate().unwrap_or_else(|e| panic!("{name}: {e}"));
            assert_eq!(cfg.preset.as_deref(), Some(name));
        }
    }

    #[test]
    fn table_rows() {
        let base = RunConfig::preset("baseline").unwrap();
        assert_eq!(base.vocoder.chain, ScaleChain::new(2, 160, 160));
        assert_eq!(base.train.vocoder.frames, 32);
        assert_eq!(base.scheduler.vocoder, ScheduleConfig::multistep_baseline());
        let best = RunConfig::preset("best-en").unwrap();
        assert_eq!(best.vocoder.chain, ScaleChain::new(10, 16, 80));
        assert_eq!((best.features.hop, best.train.vocoder.frames), (80, 102));
        assert_eq!(best.scheduler.vocoder.total_steps, 60_000);
        assert_eq!(best, RunConfig { preset: Some("best-en".into()), ..RunConfig::preset("table2-row5").unwrap() });
        let f = RunConfig::preset("table2-row4").unwrap();
        assert_eq!(f.vocoder.upsamplers, [Upsampler::FourierTile; 2]);
        assert_eq!((f.vocoder.chain.s1, f.vocoder.chain.s2, f.features.hop, f.train.vocoder.frames), (16, 16, 128, 64));
        let steps: Vec<u64> = ["table2-row1", "table2-row2", "table2-row3"]
            .iter()
            .map(|p| RunConfig::preset(p).unwrap().scheduler.vocoder.total_steps)
            .collect();
        assert_eq!(steps, [30_000, 40_000, 60_000]);
    }

    #[test]
    fn toml_preset_expansion_and_overrides() {
        let cfg = RunConfig::from_toml_str("preset = \"table2-row5\"\nseed = 7\n[train.vocoder]\nbatch_size = 4\n").unwrap();
        assert_eq!(cfg.features.hop, 80);
        assert_eq!(cfg.vocoder.chain, ScaleChain::new(10, 16, 80));
        assert_eq!(cfg.train.vocoder.frames, 102);
        assert_eq!(cfg.train.vocoder.batch_size, 4);
        assert_eq!(cfg.seed, 7);
    }

    #[test]
    fn chain_mismatch_names_rule() {
        let err = RunConfig::from_toml_str(
            "preset = \"table2-row1\"\n[features]\nhop = 128\n[vocoder.chain]\nhop = 128\n",
        )
        .unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("vocoder.chain"), "{msg}");
        assert!(msg.contains("2·hop") || msg.contains("2 * hop") || msg.contains("2·"), "{msg}");
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn unknown_key_reports_path() {
        let err = RunConfig::from_toml_str("[vocoder]\nframe_hiden = 3\n").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("vocoder") && msg.contains("frame_hiden"), "{msg}");
    }

    #[test]
    fn toml_round_trip() {
        for name in ["toy", "best-en", "hifi-24k"] {
            let cfg = RunConfig::preset(name).unwrap();
            let back = RunConfig::from_toml_str(&cfg.to_toml()).unwrap();
            assert_eq!(back, cfg);
        }
    }

    #[test]
    fn frames_must_be_even() {
        let err = RunConfig::from_toml_str("[train.vocoder]\nframes = 17\n").unwrap_err();
        assert!(err.to_string().contains("train.vocoder.frames"), "{err}");
    }
}
