use std::collections::BTreeMap;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::config::RunConfig;
use crate::nn::{Adam, AdamState, Module, Real};

pub const MAGIC: &[u8; 4] = b"ZVCK";
pub const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("not a checkpoint: bad magic bytes")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    UnsupportedVersion(u32),
    #[error("truncated checkpoint: need {needed} bytes, file has {got}")]
    Truncated { needed: u64, got: u64 },
    #[error("bad checkpoint header: {0}")]
    Header(String),
    #[error("bad tensor layout: {0}")]
    Layout(String),
    #[error("tensor `{name}` has shape {found:?} in the checkpoint but {expected:?} in the current config")]
    ShapeMismatch {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("tensor `{0}` missing from checkpoint")]
    MissingTensor(String),
    #[error("checkpoint holds a {found} model, expected {expected}")]
    WrongKind { expected: String, found: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    F32(Vec<f32>),
    F64(Vec<f64>),
}

impl TensorData {
    fn dtype(&self) -> &'static str {
        match self {
            TensorData::F32(_) => "f32",
            TensorData::F64(_) => "f64",
        }
    }

    fn from_real<T: Real>(values: &[T]) -> Self {
        if T::NAME == "f64" {
            TensorData::F64(values.iter().map(|v| v.to_f64().unwrap_or(f64::NAN)).collect())
        } else {
            TensorData::F32(values.iter().map(|v| v.to_f32().unwrap_or(f32::NAN)).collect())
        }
    }

    fn to_real<T: Real>(&self) -> Vec<T> {
        match self {
            TensorData::F32(v) => v.iter().map(|&x| T::of(x as f64)).collect(),
            TensorData::F64(v) => v.iter().map(|&x| T::of(x)).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StoredTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: TensorData,
}

/// Full ChaCha8 position: seed, stream and word offset.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: String,
    pub stream: u64,
    /// Decimal `u128`.
    pub word_pos: String,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        Self {
            seed: hex::encode(rng.get_seed()),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos().to_string(),
        }
    }

    pub fn restore(&self) -> Result<ChaCha8Rng, CheckpointError> {
        let bad = |m: &str| CheckpointError::Header(format!("rng state: {m}"));
        let seed: [u8; 32] = hex::decode(&self.seed)
            .map_err(|_| bad("seed is not hex"))?
            .try_into()
            .map_err(|_| bad("seed must be 32 bytes"))?;
        let pos: u128 = self.word_pos.parse().map_err(|_| bad("word_pos"))?;
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(pos);
        Ok(rng)
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    dtype: String,
    offset: u64,
    nbytes: u64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    kind: String,
    step: u64,
    config: RunConfig,
    rng: BTreeMap<String, RngState>,
    counters: BTreeMap<String, Vec<u64>>,
    tensors: Vec<TensorEntry>,
}

/// Model weights, optimiser moments, step counter, config snapshot and RNG positions.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    /// `encoder` or `vocoder`.
    pub kind: String,
    pub step: u64,
    pub config: RunConfig,
    pub rng: BTreeMap<String, RngState>,
    pub counters: BTreeMap<String, Vec<u64>>,
    pub tensors: Vec<StoredTensor>,
}

impl Checkpoint {
    pub fn new(kind: &str, step: u64, config: &RunConfig) -> Self {
        Self {
            kind: kind.into(),
            step,
            config: config.clone(),
            rng: BTreeMap::new(),
            counters: BTreeMap::new(),
            tensors: Vec::new(),
        }
    }

    pub fn tensor(&self, name: &str) -> Option<&StoredTensor> {
        self.tensors.iter().find(|t| t.name == name)
    }

    pub fn expect_kind(&self, kind: &str) -> Result<(), CheckpointError> {
        if self.kind != kind {
            return Err(CheckpointError::WrongKind {
                expected: kind.into(),
                found: self.kind.clone(),
            });
        }
        Ok(())
    }

    /// `ZVCK | u32 version | u64 header length | header JSON | little-endian payload`.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut payload = Vec::new();
        let mut entries = Vec::with_capacity(self.tensors.len());
        for t in &self.tensors {
            let offset = payload.len() as u64;
            match &t.data {
                TensorData::F32(v) => v.iter().for_each(|x| payload.extend_from_slice(&x.to_le_bytes())),
                TensorData::F64(v) => v.iter().for_each(|x| payload.extend_from_slice(&x.to_le_bytes())),
            }
            entries.push(TensorEntry {
                name: t.name.clone(),
                shape: t.shape.clone(),
                dtype: t.data.dtype().into(),
                offset,
                nbytes: payload.len() as u64 - offset,
            });
        }
        let header = Header {
            kind: self.kind.clone(),
            step: self.step,
            config: self.config.clone(),
            rng: self.rng.clone(),
            counters: self.counters.clone(),
            tensors: entries,
        };
        let json = serde_json::to_vec(&header).expect("header serialises");
        let mut out = Vec::with_capacity(16 + json.len() + payload.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        out.extend_from_slice(&payload);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        let got = bytes.len() as u64;
        if bytes.len() < 4 || &bytes[..4] != MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        if bytes.len() < 16 {
            return Err(CheckpointError::Truncated { needed: 16, got });
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
        if version != VERSION {
            return Err(CheckpointError::UnsupportedVersion(version));
        }
        let header_len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes"));
        let payload_start = 16u64
            .checked_add(header_len)
            .ok_or_else(|| CheckpointError::Header("header length overflows".into()))?;
        if got < payload_start {
            return Err(CheckpointError::Truncated { needed: payload_start, got });
        }
        let header: Header = serde_json::from_slice(&bytes[16..payload_start as usize])
            .map_err(|e| CheckpointError::Header(e.to_string()))?;
        let payload = &bytes[payload_start as usize..];

        let mut cursor = 0u64;
        let mut tensors = Vec::with_capacity(header.tensors.len());
        for e in header.tensors {
            if e.offset != cursor {
                return Err(CheckpointError::Layout(format!(
                    "tensor `{}` starts at {} but the previous one ends at {cursor}",
                    e.name, e.offset
                )));
            }
            let width = match e.dtype.as_str() {
                "f32" => 4,
                "f64" => 8,
                other => return Err(CheckpointError::Layout(format!("tensor `{}` has dtype {other}", e.name))),
            };
            let numel: usize = e.shape.iter().product();
            if e.nbytes != (numel * width) as u64 {
                return Err(CheckpointError::Layout(format!(
                    "tensor `{}`: {} bytes for shape {:?}",
                    e.name, e.nbytes, e.shape
                )));
            }
            let end = e.offset + e.nbytes;
            if end > payload.len() as u64 {
                return Err(CheckpointError::Truncated {
                    needed: payload_start + end,
                    got,
                });
            }
            let raw = &payload[e.offset as usize..end as usize];
            let data = if width == 4 {
                TensorData::F32(raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4"))).collect())
            } else {
                TensorData::F64(raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8"))).collect())
            };
            tensors.push(StoredTensor {
                name: e.name,
                shape: e.shape,
                data,
            });
            cursor = end;
        }
        if cursor != payload.len() as u64 {
            return Err(CheckpointError::Layout(format!(
                "{} trailing payload bytes",
                payload.len() as u64 - cursor
            )));
        }
        Ok(Self {
            kind: header.kind,
            step: header.step,
            config: header.config,
            rng: header.rng,
            counters: header.counters,
            tensors,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        super::write_atomic(path, &self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    /// Store every parameter as `model/<name>` and the Adam moments as `adam_m/<name>`, `adam_v/<name>`.
    pub fn capture_module<T: Real, M: Module<T> + ?Sized>(&mut self, model: &M, adam: &Adam<T>) {
        let mut idx = 0;
        let mut steps = Vec::new();
        model.visit_params(&mut |name, p| {
            self.tensors.push(StoredTensor {
                name: format!("model/{name}"),
                shape: p.shape().to_vec(),
                data: TensorData::from_real(p.data()),
            });
            if let Some(st) = adam.states.get(idx) {
                for (prefix, buf) in [("adam_m", &st.m), ("adam_v", &st.v)] {
                    self.tensors.push(StoredTensor {
                        name: format!("{prefix}/{name}"),
                        shape: p.shape().to_vec(),
                        data: TensorData::from_real(buf),
                    });
                }
                steps.push(st.step);
            }
            idx += 1;
        });
        self.counters.insert("adam_step".into(), steps);
    }

    /// Inverse of [`capture_module`](Self::capture_module); shapes must match the live model.
    pub fn restore_module<T: Real, M: Module<T> + ?Sized>(
        &self,
        model: &mut M,
        adam: &mut Adam<T>,
    ) -> Result<(), CheckpointError> {
        let lookup = |name: &str, shape: &[usize]| -> Result<Vec<T>, CheckpointError> {
            let t = self.tensor(name).ok_or_else(|| CheckpointError::MissingTensor(name.into()))?;
            if t.shape != shape {
                return Err(CheckpointError::ShapeMismatch {
                    name: name.into(),
                    expected: shape.to_vec(),
                    found: t.shape.clone(),
                });
            }
            Ok(t.data.to_real())
        };
        let steps = self.counters.get("adam_step").cloned().unwrap_or_default();
        let mut states = Vec::new();
        let mut idx = 0;
        let mut result = Ok(());
        model.visit_params_mut(&mut |name, p| {
            if result.is_err() {
                return;
            }
            let shape = p.shape().to_vec();
            match lookup(&format!("model/{name}"), &shape) {
                Ok(v) => p.data_mut().copy_from_slice(&v),
                Err(e) => {
                    result = Err(e);
                    return;
                }
            }
            if idx < steps.len() {
                let m = lookup(&format!("adam_m/{name}"), &shape);
                let v = lookup(&format!("adam_v/{name}"), &shape);
                match (m, v) {
                    (Ok(m), Ok(v)) => states.push(AdamState { m, v, step: steps[idx] }),
                    (Err(e), _) | (_, Err(e)) => result = Err(e),
                }
            }
            idx += 1;
        });
        result?;
        adam.states = states;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Linear;
    use rand::Rng;

    fn sample() -> Checkpoint {
        let cfg = RunConfig::preset("toy").unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let lin = Linear::<f32>::new(3, 2, true, &mut rng);
        let mut c = Checkpoint::new("test", 17, &cfg);
        c.capture_module(&lin, &Adam::new(Default::default()));
        let _: u64 = rng.random();
        c.rng.insert("data".into(), RngState::capture(&rng));
        c
    }

    #[test]
    fn save_load_save_identical() {
        let c = sample();
        let bytes = c.to_bytes();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.to_bytes(), bytes);
        assert_eq!(&bytes[..4], b"ZVCK");
    }

    #[test]
    fn rng_resumes_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..37 {
            let _: u32 = rng.random();
        }
        let mut restored = RngState::capture(&rng).restore().unwrap();
        let a: Vec<u64> = (0..5).map(|_| rng.random()).collect();
        let b: Vec<u64> = (0..5).map(|_| restored.random()).collect();
        assert_eq!(a, b);
    }

    #[test]
    fn corrupt_inputs() {
        let bytes = sample().to_bytes();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(Checkpoint::from_bytes(&bad), Err(CheckpointError::BadMagic)));
        assert!(matches!(
            Checkpoint::from_bytes(&bytes[..bytes.len() - 3]),
            Err(CheckpointError::Truncated { .. })
        ));
        assert!(matches!(Checkpoint::from_bytes(&bytes[..10]), Err(CheckpointError::Truncated { .. })));
    }

    #[test]
    fn shape_error_names_tensor() {
        let c = sample();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut wider = Linear::<f32>::new(3, 5, true, &mut rng);
        let err = c.restore_module(&mut wider, &mut Adam::new(Default::default())).unwrap_err();
        assert!(err.to_string().contains("model/weight"), "{err}");
    }

    #[test]
    fn module_and_adam_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut lin = Linear::<f64>::new(2, 2, true, &mut rng);
        let mut adam = Adam::new(Default::default());
        lin.visit_params_mut(&mut |_, p| p.grad_mut().iter_mut().for_each(|g| *g = 0.5));
        adam.step(&mut lin, 0.1).unwrap();
        let mut c = Checkpoint::new("linear", 1, &RunConfig::preset("toy").unwrap());
        c.capture_module(&lin, &adam);
        let c = Checkpoint::from_bytes(&c.to_bytes()).unwrap();
        let mut other = Linear::<f64>::new(2, 2, true, &mut ChaCha8Rng::seed_from_u64(99));
        let mut other_adam = Adam::new(Default::default());
        c.restore_module(&mut other, &mut other_adam).unwrap();
        assert_eq!(other.weight.data(), lin.weight.data());
        assert_eq!(other_adam.states, adam.states);
    }
}
