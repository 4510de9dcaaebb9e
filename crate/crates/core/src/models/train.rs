use std::time::Instant;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::encoder::Encoder;
use super::vocoder::{mulaw_codes, Vocoder};
use super::ModelError;
use crate::audio::{mulaw_encode, MelSpectrogram};
use crate::nn::{clip_grad_norm, softmax_xent, Adam, AdamHyper, Module, Real, Tensor};
use crate::schedule::{lr_at, ScheduleConfig, Trainable};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    /// Mel frames per training window; the vocoder sees `frames / 2` units.
    pub frames: usize,
    #[serde(default = "default_clip")]
    pub clip_norm: f64,
    #[serde(default = "default_log_every")]
    pub log_every: u64,
    /// Validation interval in steps; 0 validates only after the last step.
    #[serde(default)]
    pub val_every: u64,
}

fn default_clip() -> f64 {
    1.0
}
fn default_log_every() -> u64 {
    100
}

impl TrainConfig {
    pub fn new(batch_size: usize, frames: usize) -> Self {
        Self {
            batch_size,
            frames,
            clip_norm: 1.0,
            log_every: 100,
            val_every: 0,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.batch_size == 0 {
            return Err(ModelError::Config("train.batch_size must be ≥ 1".into()));
        }
        if self.frames < 2 {
            return Err(ModelError::Config("train.frames must be ≥ 2".into()));
        }
        if !(self.clip_norm > 0.0) {
            return Err(ModelError::Config("train.clip_norm must be > 0".into()));
        }
        Ok(())
    }
}

/// One row of the loss log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainRecord {
    pub step: u64,
    pub lr: f64,
    pub loss: f64,
    pub grad_norm: f64,
    pub accuracy: Option<f64>,
    pub val_nll: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub records: Vec<TrainRecord>,
    pub final_val_nll: Option<f64>,
    pub wall_secs: f64,
}

impl TrainLog {
    pub fn to_csv(&self) -> Result<Vec<u8>, csv::Error> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in &self.records {
            w.serialize(r)?;
        }
        w.into_inner().map_err(|e| e.into_error().into())
    }
}

// ---------------------------------------------------------------- vocoder

/// One utterance for vocoder training: units at the unit rate and the matching audio.
#[derive(Debug, Clone, PartialEq)]
pub struct VocoderItem {
    pub id: String,
    pub units: Vec<usize>,
    pub speaker: usize,
    pub audio: Vec<f32>,
}

#[derive(Debug, Clone)]
pub struct VocoderCorpus {
    pub items: Vec<VocoderItem>,
    pub samples_per_unit: usize,
    pub mu_channels: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VocoderBatch {
    pub units: Vec<usize>,
    pub speakers: Vec<usize>,
    pub prev: Vec<usize>,
    pub targets: Vec<usize>,
    pub batch: usize,
}

impl VocoderCorpus {
    /// Audio is trimmed to `len(units) · samples_per_unit`; shorter audio is an error.
    pub fn new(mut items: Vec<VocoderItem>, samples_per_unit: usize, mu_channels: usize) -> Result<Self, ModelError> {
        for it in &mut items {
            let need = it.units.len() * samples_per_unit;
            if it.audio.len() < need {
                return Err(ModelError::LengthMismatch { expected: need, got: it.audio.len() });
            }
            it.audio.truncate(need);
        }
        Ok(Self {
            items,
            samples_per_unit,
            mu_channels,
        })
    }

    fn window(&self, item: &VocoderItem, u0: usize, n_units: usize, out: &mut VocoderBatch) {
        let spu = self.samples_per_unit;
        let (start, end) = (u0 * spu, (u0 + n_units) * spu);
        out.units.extend_from_slice(&item.units[u0..u0 + n_units]);
        out.speakers.push(item.speaker);
        let targets = mulaw_codes(&item.audio[start..end], self.mu_channels);
        let first = if start > 0 {
            mulaw_encode(item.audio[start - 1] as f64, self.mu_channels)
        } else {
            self.mu_channels / 2
        };
        out.prev.push(first);
        out.prev.extend_from_slice(&targets[..targets.len() - 1]);
        out.targets.extend(targets);
        out.batch += 1;
    }

    fn empty_batch() -> VocoderBatch {
        VocoderBatch {
            units: Vec::new(),
            speakers: Vec::new(),
            prev: Vec::new(),
            targets: Vec::new(),
            batch: 0,
        }
    }

    /// Random windows of `n_units` units from utterances long enough to hold one.
    pub fn sample_batch<R: Rng + ?Sized>(&self, batch: usize, n_units: usize, rng: &mut R) -> Result<VocoderBatch, ModelError> {
        let eligible: Vec<&VocoderItem> = self.items.iter().filter(|it| it.units.len() >= n_units).collect();
        if eligible.is_empty() || n_units == 0 {
            return Err(ModelError::NoData);
        }
        let mut out = Self::empty_batch();
        for _ in 0..batch {
            let item = eligible[rng.random_range(0..eligible.len())];
            let u0 = rng.random_range(0..=item.units.len() - n_units);
            self.window(item, u0, n_units, &mut out);
        }
        Ok(out)
    }

    /// Every non-overlapping window, in order, grouped into batches.
    pub fn sequential_batches(&self, batch: usize, n_units: usize) -> Vec<VocoderBatch> {
        let mut batches = Vec::new();
        let mut cur = Self::empty_batch();
        for item in &self.items {
            let mut u0 = 0;
            while n_units > 0 && u0 + n_units <= item.units.len() {
                self.window(item, u0, n_units, &mut cur);
                if cur.batch == batch {
                    batches.push(std::mem::replace(&mut cur, Self::empty_batch()));
                }
                u0 += n_units;
            }
        }
        if cur.batch > 0 {
            batches.push(cur);
        }
        batches
    }
}

/// A vocoder with its optimiser state and step counter.
#[derive(Debug, Clone)]
pub struct VocoderTrainer<T: Real> {
    pub vocoder: Vocoder<T>,
    pub adam: Adam<T>,
    pub clip_norm: f64,
    pub step: u64,
}

impl<T: Real> VocoderTrainer<T> {
    pub fn new(vocoder: Vocoder<T>, clip_norm: f64) -> Self {
        Self {
            vocoder,
            adam: Adam::new(AdamHyper::default()),
            clip_norm,
            step: 0,
        }
    }

    /// Forward, backward, clip, Adam. Returns `(loss, pre-clip gradient norm)`.
    pub fn step_on(&mut self, batch: &VocoderBatch, lr: f64) -> Result<(f64, f64), ModelError> {
        self.vocoder.zero_grad();
        let logits = self.vocoder.forward(&batch.units, &batch.speakers, &batch.prev, batch.batch)?;
        let (loss, grad) = softmax_xent(&logits, &batch.targets)?;
        let loss = loss.f64();
        if !loss.is_finite() {
            return Err(ModelError::NonFiniteLoss { step: self.step, lr, batch: self.step });
        }
        self.vocoder.backward(&grad)?;
        let norm = clip_grad_norm(&mut self.vocoder, self.clip_norm);
        self.adam.step(&mut self.vocoder, lr)?;
        self.step += 1;
        Ok((loss, norm))
    }

    /// Mean negative log-likelihood per sample (nats) under teacher forcing.
    pub fn nll(&mut self, batches: &[VocoderBatch]) -> Result<f64, ModelError> {
        let (mut total, mut rows) = (0.0, 0usize);
        for b in batches {
            let logits = self.vocoder.forward(&b.units, &b.speakers, &b.prev, b.batch)?;
            let (loss, _) = softmax_xent(&logits, &b.targets)?;
            total += loss.f64() * b.targets.len() as f64;
            rows += b.targets.len();
        }
        if rows == 0 {
            return Err(ModelError::NoData);
        }
        Ok(total / rows as f64)
    }
}

impl<T: Real> Trainable for VocoderTrainer<T> {
    type Batch = VocoderBatch;

    fn train_step(&mut self, batch: &VocoderBatch, lr: f64) -> f64 {
        self.step_on(batch, lr).map_or(f64::NAN, |(l, _)| l)
    }
}

/// Train from `trainer.step` up to (excluding) `until`, drawing one batch per step from `rng`.
pub fn train_vocoder<T: Real>(
    trainer: &mut VocoderTrainer<T>,
    data: &VocoderCorpus,
    val: Option<&VocoderCorpus>,
    schedule: &ScheduleConfig,
    tc: &TrainConfig,
    rng: &mut ChaCha8Rng,
    until: u64,
) -> Result<TrainLog, ModelError> {
    tc.validate()?;
    schedule.validate()?;
    let started = Instant::now();
    let n_units = tc.frames / 2;
    let val_batches = val.map(|v| v.sequential_batches(tc.batch_size, n_units));
    let mut log = TrainLog::default();
    let until = until.min(schedule.total_steps);
    while trainer.step < until {
        let step = trainer.step;
        let lr = lr_at(schedule, step)?;
        let batch = data.sample_batch(tc.batch_size, n_units, rng)?;
        let (loss, grad_norm) = trainer.step_on(&batch, lr)?;
        let last = trainer.step == schedule.total_steps;
        let validate = tc.val_every > 0 && trainer.step % tc.val_every == 0;
        let val_nll = match &val_batches {
            Some(b) if validate || last => Some(trainer.nll(b)?),
            _ => None,
        };
        if step % tc.log_every.max(1) == 0 || last || val_nll.is_some() {
            log.records.push(TrainRecord {
                step,
                lr,
                loss,
                grad_norm,
                accuracy: None,
                val_nll,
            });
        }
        if last {
            log.final_val_nll = val_nll;
        }
    }
    log.wall_secs = started.elapsed().as_secs_f64();
    Ok(log)
}

// ---------------------------------------------------------------- encoder

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderBatch {
    /// `[batch, n_mels, frames]`, row-major.
    pub values: Vec<f64>,
    pub batch: usize,
    pub n_mels: usize,
    pub frames: usize,
}

impl EncoderBatch {
    pub fn sample<R: Rng + ?Sized>(mels: &[MelSpectrogram], batch: usize, frames: usize, rng: &mut R) -> Result<Self, ModelError> {
        let eligible: Vec<&MelSpectrogram> = mels.iter().filter(|m| m.n_frames >= frames).collect();
        if eligible.is_empty() {
            return Err(ModelError::NoData);
        }
        let n_mels = eligible[0].n_mels;
        let mut values = Vec::with_capacity(batch * n_mels * frames);
        for _ in 0..batch {
            let m = eligible[rng.random_range(0..eligible.len())];
            let start = rng.random_range(0..=m.n_frames - frames);
            values.extend(m.slice_frames(start, frames).values);
        }
        Ok(Self {
            values,
            batch,
            n_mels,
            frames,
        })
    }

    pub fn tensor<T: Real>(&self) -> Tensor<T> {
        Tensor::from_vec(
            &[self.batch, self.n_mels, self.frames],
            self.values.iter().map(|&v| T::of(v)).collect(),
        )
        .expect("batch shape")
    }
}

/// An encoder with optimiser state, step counter and the negative-sampling stream.
#[derive(Debug, Clone)]
pub struct EncoderTrainer<T: Real> {
    pub encoder: Encoder<T>,
    pub adam: Adam<T>,
    pub clip_norm: f64,
    pub step: u64,
    pub rng: ChaCha8Rng,
}

impl<T: Real> EncoderTrainer<T> {
    pub fn new(encoder: Encoder<T>, clip_norm: f64, rng: ChaCha8Rng) -> Self {
        Self {
            encoder,
            adam: Adam::new(AdamHyper::default()),
            clip_norm,
            step: 0,
            rng,
        }
    }

    /// Returns `(loss, mean accuracy over horizons, pre-clip gradient norm)`.
    pub fn step_on(&mut self, batch: &EncoderBatch, lr: f64) -> Result<(f64, f64, f64), ModelError> {
        self.encoder.zero_grad();
        let x = batch.tensor::<T>();
        let out = self.encoder.loss_and_grads(&x, &mut self.rng)?;
        if !out.loss.is_finite() {
            return Err(ModelError::NonFiniteLoss { step: self.step, lr, batch: self.step });
        }
        let norm = clip_grad_norm(&mut self.encoder, self.clip_norm);
        self.adam.step(&mut self.encoder, lr)?;
        self.encoder.codebook.record_usage(&out.indices);
        let max_idle = self.encoder.config.dead_code_steps;
        if max_idle > 0 && self.encoder.codebook.idle.iter().any(|&c| c >= max_idle) {
            let z = self.encoder.embed(&x)?;
            self.encoder.codebook.reinit_dead(&z, max_idle, &mut self.rng);
        }
        self.step += 1;
        let acc = out.accuracy.iter().sum::<f64>() / out.accuracy.len().max(1) as f64;
        Ok((out.loss, acc, norm))
    }

    /// Like [`step_on`](Self::step_on) but on unit index rows `[batch, time]`, training only the
    /// codebook, context network and predictors.
    pub fn step_on_codes(&mut self, codes: &[usize], batch: usize, time: usize, lr: f64) -> Result<(f64, f64, f64), ModelError> {
        self.encoder.zero_grad();
        let out = self.encoder.code_loss_and_grads(codes, batch, time, &mut self.rng)?;
        if !out.loss.is_finite() {
            return Err(ModelError::NonFiniteLoss { step: self.step, lr, batch: self.step });
        }
        let norm = clip_grad_norm(&mut self.encoder, self.clip_norm);
        self.adam.step(&mut self.encoder, lr)?;
        self.step += 1;
        let acc = out.accuracy.iter().sum::<f64>() / out.accuracy.len().max(1) as f64;
        Ok((out.loss, acc, norm))
    }
}

impl<T: Real> Trainable for EncoderTrainer<T> {
    type Batch = EncoderBatch;

    fn train_step(&mut self, batch: &EncoderBatch, lr: f64) -> f64 {
        self.step_on(batch, lr).map_or(f64::NAN, |(l, _, _)| l)
    }
}

pub fn train_encoder<T: Real>(
    trainer: &mut EncoderTrainer<T>,
    mels: &[MelSpectrogram],
    schedule: &ScheduleConfig,
    tc: &TrainConfig,
    rng: &mut ChaCha8Rng,
    until: u64,
) -> Result<TrainLog, ModelError> {
    tc.validate()?;
    schedule.validate()?;
    let started = Instant::now();
    let mut log = TrainLog::default();
    let until = until.min(schedule.total_steps);
    while trainer.step < until {
        let step = trainer.step;
        let lr = lr_at(schedule, step)?;
        let batch = EncoderBatch::sample(mels, tc.batch_size, tc.frames, rng)?;
        let (loss, acc, grad_norm) = trainer.step_on(&batch, lr)?;
        if step % tc.log_every.max(1) == 0 || trainer.step == schedule.total_steps {
            log.records.push(TrainRecord {
                step,
                lr,
                loss,
                grad_norm,
                accuracy: Some(acc),
                val_nll: None,
            });
        }
    }
    log.wall_secs = started.elapsed().as_secs_f64();
    Ok(log)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio::Split;
    use crate::models::{EncoderConfig, VocoderConfig};
    use crate::synthetic::{generate, pattern_mels, phone_unit_items, SyntheticConfig};
    use rand::SeedableRng;

    fn params<T: Real, M: Module<T>>(m: &M) -> Vec<Vec<T>> {
        let mut out = Vec::new();
        m.visit_params(&mut |_, p| out.push(p.data().to_vec()));
        out
    }

    fn toy_corpus() -> VocoderCorpus {
        let corpus = generate(&SyntheticConfig::default(), 3);
        VocoderCorpus::new(phone_unit_items(&corpus, Split::Train), 32, 256).unwrap()
    }

    fn run_vocoder(steps: u64, data: &VocoderCorpus) -> (VocoderTrainer<f64>, TrainLog) {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let v = Vocoder::<f64>::new(&VocoderConfig::toy(9, 4), &mut rng).unwrap();
        let mut tr = VocoderTrainer::new(v, 1.0);
        let tc = TrainConfig { log_every: 1, ..TrainConfig::new(2, 4) };
        let sched = ScheduleConfig::one_cycle(1e-2, steps.max(1));
        let log = train_vocoder(&mut tr, data, None, &sched, &tc, &mut rng, steps).unwrap();
        (tr, log)
    }

    #[test]
    fn zero_steps_leaves_initialisation() {
        let data = toy_corpus();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let init = Vocoder::<f64>::new(&VocoderConfig::toy(9, 4), &mut rng).unwrap();
        let (tr, log) = run_vocoder(0, &data);
        assert!(log.records.is_empty());
        assert_eq!(params(&tr.vocoder), params(&init));
    }

    #[test]
    fn vocoder_training_is_deterministic() {
        let data = toy_corpus();
        let (a, la) = run_vocoder(4, &data);
        let (b, lb) = run_vocoder(4, &data);
        assert_eq!(params(&a.vocoder), params(&b.vocoder));
        assert_eq!(la.to_csv().unwrap(), lb.to_csv().unwrap());
        assert_eq!(la.records.len(), 4);
        assert!(la.records.iter().all(|r| r.loss.is_finite() && r.grad_norm.is_finite()));
    }

    #[test]
    fn encoder_training_is_deterministic() {
        let mels = pattern_mels(4, 24, 6, 4, 1);
        let cfg = EncoderConfig { channels: 8, code_dim: 4, codebook_size: 8, context_dim: 8, ..EncoderConfig::toy(6) };
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(2);
            let enc = Encoder::<f64>::new(&cfg, &mut rng).unwrap();
            let mut tr = EncoderTrainer::new(enc, 1.0, ChaCha8Rng::seed_from_u64(3));
            let tc = TrainConfig { log_every: 1, ..TrainConfig::new(2, 16) };
            let log = train_encoder(&mut tr, &mels, &ScheduleConfig::one_cycle(1e-2, 3), &tc, &mut rng, u64::MAX).unwrap();
            (params(&tr.encoder), log.to_csv().unwrap(), tr.encoder.codebook.usage.clone())
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn until_stops_early_and_batches_validate() {
        let data = toy_corpus();
        let (tr, _) = run_vocoder(2, &data);
        assert_eq!(tr.step, 2);
        assert!(matches!(TrainConfig::new(0, 4).validate(), Err(ModelError::Config(_))));
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(data.sample_batch(1, 10_000, &mut rng), Err(ModelError::NoData)));
    }
}
