use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{AudioError, MelSpectrogram, NormState};

const MAGIC: &[u8; 4] = b"MEL1";

/// JSON metadata stored next to a `MEL1` feature file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSidecar {
    pub config_hash: String,
    pub norm_state: NormState,
}

fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

/// Write `MEL1 | u32 n_mels | u32 n_frames | f32 LE values (row-major)` plus a JSON sidecar.
///
/// Both files are written to temporaries and renamed into place.
pub fn write_feature_cache(path: impl AsRef<Path>, mel: &MelSpectrogram) -> Result<(), AudioError> {
    let path = path.as_ref();
    let mut bytes = Vec::with_capacity(12 + 4 * mel.values.len());
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&(mel.n_mels as u32).to_le_bytes());
    bytes.extend_from_slice(&(mel.n_frames as u32).to_le_bytes());
    for &v in &mel.values {
        bytes.extend_from_slice(&(v as f32).to_le_bytes());
    }
    let sidecar = FeatureSidecar {
        config_hash: mel.config_hash.clone(),
        norm_state: mel.norm_state,
    };
    crate::harness::write_atomic(&sidecar_path(path), &serde_json::to_vec_pretty(&sidecar)?)?;
    crate::harness::write_atomic(path, &bytes)?;
    Ok(())
}

pub fn read_feature_cache(path: impl AsRef<Path>) -> Result<MelSpectrogram, AudioError> {
    let path = path.as_ref();
    let bytes = std::fs::read(path)?;
    if bytes.len() < 12 || &bytes[..4] != MAGIC {
        return Err(AudioError::MalformedCache("missing MEL1 magic".into()));
    }
    let n_mels = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let n_frames = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let payload = &bytes[12..];
    if payload.len() != 4 * n_mels * n_frames {
        return Err(AudioError::MalformedCache(format!(
            "expected {} value bytes, found {}",
            4 * n_mels * n_frames,
            payload.len()
        )));
    }
    let values = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    let sidecar: FeatureSidecar = serde_json::from_slice(&std::fs::read(sidecar_path(path))?)?;
    Ok(MelSpectrogram::new(
        n_mels,
        n_frames,
        values,
        sidecar.config_hash,
        sidecar.norm_state,
    ))
}
