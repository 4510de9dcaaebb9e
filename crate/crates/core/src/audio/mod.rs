//! Audio ingestion and the log-Mel front end shared by the encoder and the vocoder.

mod cache;
mod manifest;
mod mel;
mod mulaw;
mod resample;
mod wav;

pub use cache::{read_feature_cache, write_feature_cache, FeatureSidecar};
pub use manifest::{read_manifest, write_manifest, ManifestEntry, Split};
pub use mel::{
    denormalize, frame_count, hann_window, hz_to_mel, log_mel, mel_filterbank, mel_to_hz,
    minmax_normalize, sample_training_window, FeatureConfig, MelSpectrogram, NormState,
    TrainingWindow,
};
pub use mulaw::{mulaw_decode, mulaw_encode, MU_LAW_CHANNELS};
pub use resample::resample;
pub use wav::{load_wav, save_wav};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum AudioError {
    #[error("malformed WAV: {0}")]
    MalformedWav(String),
    #[error("unsupported WAV codec: {0}")]
    UnsupportedCodec(String),
    #[error("WAV file has no samples")]
    EmptyPayload,
    #[error("signal of {len} samples is shorter than one {win}-sample window")]
    TooShort { len: usize, win: usize },
    #[error("invalid feature config: {0}")]
    InvalidConfig(String),
    #[error("invalid waveform: {0}")]
    InvalidWaveform(String),
    #[error("spectrogram must be in {expected} state, found {found}")]
    WrongNormState { expected: &'static str, found: String },
    #[error("utterance too short for a {frames}-frame window ({available} frames, {samples} samples)")]
    WindowTooLong {
        frames: usize,
        available: usize,
        samples: usize,
    },
    #[error("malformed feature cache: {0}")]
    MalformedCache(String),
    #[error("manifest line {line}: {msg}")]
    Manifest { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Mono audio with its sample rate.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    samples: Vec<f32>,
    sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f32>, sample_rate: u32) -> Result<Self, AudioError> {
        if sample_rate == 0 {
            return Err(AudioError::InvalidWaveform("sample rate must be positive".into()));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(AudioError::InvalidWaveform(format!("non-finite sample at index {i}")));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn samples(&self) -> &[f32] {
        &self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    /// Clamp every sample into [-1, 1].
    pub fn clamped(mut self) -> Self {
        for s in &mut self.samples {
            *s = s.clamp(-1.0, 1.0);
        }
        self
    }

    pub fn into_samples(self) -> Vec<f32> {
        self.samples
    }
}
