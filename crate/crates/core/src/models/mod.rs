//! The VQ-CPC unit encoder and the unit-conditioned autoregressive vocoder.

pub mod cpc;
pub mod encoder;
pub mod train;
pub mod vocoder;
pub mod vq;

pub use cpc::{cpc_infonce_loss, InfoNce};
pub use encoder::{encode, Encoder, EncoderConfig, EncoderGrads};
pub use train::{
    train_encoder, train_vocoder, EncoderBatch, EncoderTrainer, TrainConfig, TrainLog, TrainRecord,
    VocoderBatch, VocoderCorpus, VocoderItem, VocoderTrainer,
};
pub use vocoder::{vocoder_forward, vocoder_generate, Sampling, Vocoder, VocoderConfig};
pub use vq::{vq_backward, vq_quantize, Codebook, VqOutput};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nn::NnError;
use crate::upsample::UpsampleError;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("codebook is empty")]
    EmptyCodebook,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dim { expected: usize, got: usize },
    #[error("input of {frames} frames is shorter than the receptive field ({min})")]
    TooShort { frames: usize, min: usize },
    #[error("need more than {horizon} time steps for the prediction horizon, got {time}")]
    HorizonTooLong { horizon: usize, time: usize },
    #[error("batch of {rows} rows is too small to draw negatives")]
    TooFewNegatives { rows: usize },
    #[error("teacher audio has {got} samples, expected {expected} for the unit count")]
    LengthMismatch { expected: usize, got: usize },
    #[error("index {index} out of range ({size})")]
    IndexOutOfRange { index: usize, size: usize },
    #[error("non-finite loss at step {step} (lr {lr:e}, batch {batch})")]
    NonFiniteLoss { step: u64, lr: f64, batch: u64 },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("empty training set")]
    NoData,
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Upsample(#[from] UpsampleError),
    #[error(transparent)]
    Schedule(#[from] crate::schedule::ScheduleError),
}

/// A discrete unit sequence for one utterance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitSequence {
    pub id: String,
    pub speaker: String,
    pub indices: Vec<usize>,
    /// Units per second: `sample_rate / (2·hop)`.
    pub frame_rate: f64,
}

impl UnitSequence {
    pub fn duration_secs(&self) -> f64 {
        self.indices.len() as f64 / self.frame_rate
    }
}
