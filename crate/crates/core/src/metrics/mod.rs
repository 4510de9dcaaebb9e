//! Evaluation metrics: error rates, spectrogram quality, bitrate, DTW and ABX.

mod abx;
mod bitrate;
mod dtw;
mod edit;
mod spectral;

pub use abx::{abx_error, abx_error_with, AbxConfig, AbxItem, AbxMode};
pub use bitrate::{bitrate, entropy_bits};
pub use dtw::{dtw_distance, FrameMetric};
pub use edit::{corpus_error_rate, edit_distance, error_rate, tokenize, utterance_mean_error_rate, TokenUnit};
pub use spectral::{align_frames, ls_mse, psnr, ssim, SSIM_C1, SSIM_C2};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("empty reference")]
    EmptyReference,
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("duration must be positive")]
    NonPositiveDuration,
    #[error("no valid ABX triplet for mode {0:?}")]
    NoTriplets(AbxMode),
    #[error("need at least two categories")]
    TooFewCategories,
}

/// One metric value with its context, written as a CSV row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub metric: String,
    pub value: f64,
    pub units: String,
    pub n_items: usize,
    /// Free-form settings snapshot, e.g. `window=7x7 sigma=1.5`.
    pub config: String,
}

impl MetricReport {
    pub fn new(metric: &str, value: f64, units: &str, n_items: usize, config: &str) -> Self {
        Self {
            metric: metric.into(),
            value,
            units: units.into(),
            n_items,
            config: config.into(),
        }
    }
}

pub fn reports_to_csv(reports: &[MetricReport]) -> Result<Vec<u8>, csv::Error> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in reports {
        w.serialize(r)?;
    }
    w.into_inner().map_err(|e| e.into_error().into())
}
