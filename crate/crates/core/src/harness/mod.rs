//! Run configuration, checkpoints, plots and the pipeline commands behind the CLI.

mod checkpoint;
pub mod cli;
mod config;
mod pipeline;
mod plot;

pub use checkpoint::{Checkpoint, CheckpointError, RngState, StoredTensor, TensorData};
pub use config::{
    parse_config, toy_config, DataConfig, DataSource, EvalConfig, Precision, RunConfig, SchedulerSection,
    TrainSection, PRESETS,
};
pub use pipeline::{run_pipeline, Command, RunManifest, RunOptions};
pub use plot::{line_chart, Series};

use std::io::{self, Write};
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::audio::AudioError;
use crate::metrics::MetricError;
use crate::models::ModelError;
use crate::nn::NnError;
use crate::schedule::ScheduleError;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config error at `{path}`: {msg}")]
    Config { path: String, msg: String },
    #[error("missing upstream artifact {}: run `{producer}` first", path.display())]
    MissingArtifact { path: PathBuf, producer: &'static str },
    #[error("data error: {0}")]
    Data(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Audio(#[from] AudioError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl HarnessError {
    pub fn config(path: &str, msg: String) -> Self {
        HarnessError::Config { path: path.into(), msg }
    }

    /// 2 config error, 3 data error, 4 numeric failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config { .. } => 2,
            HarnessError::Numeric(_) => 4,
            HarnessError::Model(e) => match e {
                ModelError::NonFiniteLoss { .. } | ModelError::Nn(NnError::NonFiniteGrad { .. }) => 4,
                ModelError::Config(_) => 2,
                _ => 3,
            },
            HarnessError::Schedule(ScheduleError::NoUsableRange) => 4,
            HarnessError::Schedule(_) => 2,
            HarnessError::Checkpoint(CheckpointError::ShapeMismatch { .. }) => 2,
            _ => 3,
        }
    }
}

/// Write `bytes` to `path` via a temporary file in the same directory and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Content hash in git's object style: `sha256("blob <len>\0" ‖ bytes)`.
pub fn blob_hash(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    hex::encode(h.finalize())
}
