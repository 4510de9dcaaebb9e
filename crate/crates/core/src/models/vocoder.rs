use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ModelError;
use crate::audio::{mulaw_decode, mulaw_encode, Waveform};
use crate::nn::ops::{gemm_abt, relu_backward_inplace, relu_inplace, transpose_last2};
use crate::nn::{
    visit_child, visit_child_mut, Conv1d, Embedding, Linear, Lstm, LstmState, Module, Real, Tensor,
};
use crate::upsample::{validate_scale_chain, FeatureMap, ScaleChain, Upsampler};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VocoderConfig {
    pub sample_rate: u32,
    pub n_codes: usize,
    pub code_dim: usize,
    pub n_speakers: usize,
    pub speaker_dim: usize,
    pub chain: ScaleChain,
    /// Operator for the first and second upsampling stage.
    pub upsamplers: [Upsampler; 2],
    /// Width of the LSTM between the two upsampling stages.
    pub frame_hidden: usize,
    /// Embedding width of the previous mu-law sample.
    pub mu_dim: usize,
    /// Width of the sample-rate LSTM.
    pub sample_hidden: usize,
    pub fc_dim: usize,
    #[serde(default = "default_mu")]
    pub mu_channels: usize,
}

fn default_mu() -> usize {
    256
}

impl VocoderConfig {
    pub fn full(chain: ScaleChain, upsamplers: [Upsampler; 2], n_codes: usize, n_speakers: usize) -> Self {
        Self {
            sample_rate: 16000,
            n_codes,
            code_dim: 64,
            n_speakers,
            speaker_dim: 64,
            chain,
            upsamplers,
            frame_hidden: 128,
            mu_dim: 256,
            sample_hidden: 896,
            fc_dim: 256,
            mu_channels: 256,
        }
    }

    pub fn toy(n_codes: usize, n_speakers: usize) -> Self {
        Self {
            sample_rate: 4000,
            n_codes,
            code_dim: 8,
            n_speakers,
            speaker_dim: 4,
            chain: ScaleChain::new(4, 8, 16),
            upsamplers: [Upsampler::Linear, Upsampler::Linear],
            frame_hidden: 16,
            mu_dim: 8,
            sample_hidden: 24,
            fc_dim: 32,
            mu_channels: 256,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        validate_scale_chain(&self.chain)?;
        let positive = [
            ("n_codes", self.n_codes),
            ("code_dim", self.code_dim),
            ("n_speakers", self.n_speakers),
            ("speaker_dim", self.speaker_dim),
            ("frame_hidden", self.frame_hidden),
            ("mu_dim", self.mu_dim),
            ("sample_hidden", self.sample_hidden),
            ("fc_dim", self.fc_dim),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(ModelError::Config(format!("vocoder.{name} must be ≥ 1")));
            }
        }
        if self.mu_channels < 2 {
            return Err(ModelError::Config("vocoder.mu_channels must be ≥ 2".into()));
        }
        Ok(())
    }

    /// Output samples per unit, `s1 · s2 = 2 · hop`.
    pub fn samples_per_unit(&self) -> usize {
        self.chain.s1 * self.chain.s2
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Sampling {
    Argmax,
    Temperature(f64),
}

/// One upsampling stage. `fourier_tile` inserts zeros, so it carries a learned
/// kernel shared across channels (initialised to a triangle, i.e. linear interpolation).
#[derive(Debug, Clone)]
pub struct UpsampleStage<T: Real> {
    pub kind: Upsampler,
    pub scale: usize,
    pub post: Option<Conv1d<T>>,
    in_len: usize,
    batch: usize,
    channels: usize,
}

impl<T: Real> UpsampleStage<T> {
    fn new(kind: Upsampler, scale: usize) -> Self {
        let post = (kind == Upsampler::FourierTile && scale > 1).then(|| {
            let k = 2 * scale - 1;
            let w: Vec<T> = (0..k)
                .map(|j| T::of(1.0 - (j as f64 - (scale - 1) as f64).abs() / scale as f64))
                .collect();
            let mut conv = Conv1d::new(1, 1, k, 1, scale - 1, false, &mut ChaCha8Rng::seed_from_u64(0));
            conv.weight.data_mut().copy_from_slice(&w);
            conv
        });
        Self {
            kind,
            scale,
            post,
            in_len: 0,
            batch: 0,
            channels: 0,
        }
    }

    /// `x: [batch, len, channels]` → `[batch, scale·len, channels]`.
    fn apply(&self, x: &[T], batch: usize, len: usize, channels: usize) -> Result<Vec<T>, ModelError> {
        let out_len = self.scale * len;
        let cf = transpose_last2(x, batch, len, channels);
        let mut up = Vec::with_capacity(batch * channels * out_len);
        for b in 0..batch {
            let vals = cf[b * channels * len..(b + 1) * channels * len].iter().map(|v| v.f64()).collect();
            let fm = self.kind.apply(&FeatureMap::new(channels, len, vals)?, self.scale)?;
            up.extend(fm.values.into_iter().map(T::of));
        }
        if let Some(post) = &self.post {
            let t = Tensor::from_vec(&[batch * channels, 1, out_len], up)?;
            up = post.infer(&t)?.into_data();
        }
        Ok(transpose_last2(&up, batch, channels, out_len))
    }

    fn forward(&mut self, x: &[T], batch: usize, len: usize, channels: usize) -> Result<Vec<T>, ModelError> {
        (self.in_len, self.batch, self.channels) = (len, batch, channels);
        let out_len = self.scale * len;
        if let Some(post) = &mut self.post {
            // same as apply, but keeping the conv cache
            let cf = transpose_last2(x, batch, len, channels);
            let mut up = Vec::with_capacity(batch * channels * out_len);
            for b in 0..batch {
                let vals = cf[b * channels * len..(b + 1) * channels * len].iter().map(|v| v.f64()).collect();
                let fm = self.kind.apply(&FeatureMap::new(channels, len, vals)?, self.scale)?;
                up.extend(fm.values.into_iter().map(T::of));
            }
            let y = post.forward(&Tensor::from_vec(&[batch * channels, 1, out_len], up)?)?;
            return Ok(transpose_last2(y.data(), batch, channels, out_len));
        }
        self.apply(x, batch, len, channels)
    }

    fn backward(&mut self, g: &[T]) -> Result<Vec<T>, ModelError> {
        let (batch, len, channels) = (self.batch, self.in_len, self.channels);
        let out_len = self.scale * len;
        let mut gcf = transpose_last2(g, batch, out_len, channels);
        if let Some(post) = &mut self.post {
            gcf = post.backward(&Tensor::from_vec(&[batch * channels, 1, out_len], gcf)?)?.into_data();
        }
        let mut dx = Vec::with_capacity(batch * channels * len);
        for b in 0..batch {
            let vals = gcf[b * channels * out_len..(b + 1) * channels * out_len].iter().map(|v| v.f64()).collect();
            let fm = self.kind.adjoint(&FeatureMap::new(channels, out_len, vals)?, self.scale, len)?;
            dx.extend(fm.values.into_iter().map(T::of));
        }
        Ok(transpose_last2(&dx, batch, channels, len))
    }
}

#[derive(Debug, Clone)]
struct ForwardCache<T> {
    units: Vec<usize>,
    speakers: Vec<usize>,
    prev: Vec<usize>,
    batch: usize,
    n_units: usize,
    fc1_out: Vec<T>,
}

/// Unit + speaker embedding → upsample s1 → LSTM → upsample s2 → concat with the
/// previous sample's embedding → sample LSTM → two-layer head over mu-law classes.
#[derive(Debug, Clone)]
pub struct Vocoder<T: Real> {
    pub config: VocoderConfig,
    pub code_emb: Embedding<T>,
    pub speaker_emb: Embedding<T>,
    pub up1: UpsampleStage<T>,
    pub frame_lstm: Lstm<T>,
    pub up2: UpsampleStage<T>,
    pub mu_emb: Embedding<T>,
    pub sample_lstm: Lstm<T>,
    pub fc1: Linear<T>,
    pub fc2: Linear<T>,
    cache: Option<Box<ForwardCache<T>>>,
}

fn concat_last<T: Real>(a: &[T], da: usize, b: &[T], db: usize) -> Vec<T> {
    let rows = a.len() / da.max(1);
    let mut out = Vec::with_capacity(rows * (da + db));
    for r in 0..rows {
        out.extend_from_slice(&a[r * da..(r + 1) * da]);
        out.extend_from_slice(&b[r * db..(r + 1) * db]);
    }
    out
}

fn split_last<T: Real>(x: &[T], da: usize, db: usize) -> (Vec<T>, Vec<T>) {
    let rows = x.len() / (da + db);
    let (mut a, mut b) = (Vec::with_capacity(rows * da), Vec::with_capacity(rows * db));
    for row in x.chunks(da + db) {
        a.extend_from_slice(&row[..da]);
        b.extend_from_slice(&row[da..]);
    }
    (a, b)
}

impl<T: Real> Vocoder<T> {
    pub fn new<R: Rng + ?Sized>(config: &VocoderConfig, rng: &mut R) -> Result<Self, ModelError> {
        config.validate()?;
        let c0 = config.code_dim + config.speaker_dim;
        Ok(Self {
            code_emb: Embedding::new(config.n_codes, config.code_dim, rng),
            speaker_emb: Embedding::new(config.n_speakers, config.speaker_dim, rng),
            up1: UpsampleStage::new(config.upsamplers[0], config.chain.s1),
            frame_lstm: Lstm::new(c0, config.frame_hidden, rng),
            up2: UpsampleStage::new(config.upsamplers[1], config.chain.s2),
            mu_emb: Embedding::new(config.mu_channels, config.mu_dim, rng),
            sample_lstm: Lstm::new(config.frame_hidden + config.mu_dim, config.sample_hidden, rng),
            fc1: Linear::new(config.sample_hidden, config.fc_dim, true, rng),
            fc2: Linear::new(config.fc_dim, config.mu_channels, true, rng),
            config: config.clone(),
            cache: None,
        })
    }

    fn check_indices(&self, units: &[usize], speakers: &[usize]) -> Result<(), ModelError> {
        if let Some(&u) = units.iter().find(|&&u| u >= self.config.n_codes) {
            return Err(ModelError::IndexOutOfRange { index: u, size: self.config.n_codes });
        }
        if let Some(&s) = speakers.iter().find(|&&s| s >= self.config.n_speakers) {
            return Err(ModelError::IndexOutOfRange { index: s, size: self.config.n_speakers });
        }
        Ok(())
    }

    fn unit_input(&self, units: &[usize], speakers: &[usize], batch: usize) -> Result<Vec<T>, ModelError> {
        let n_units = units.len() / batch;
        let ce = self.code_emb.forward(units)?;
        let se = self.speaker_emb.forward(speakers)?;
        let ds = self.config.speaker_dim;
        let mut broadcast = Vec::with_capacity(batch * n_units * ds);
        for b in 0..batch {
            for _ in 0..n_units {
                broadcast.extend_from_slice(&se.data()[b * ds..(b + 1) * ds]);
            }
        }
        Ok(concat_last(ce.data(), self.config.code_dim, &broadcast, ds))
    }

    /// Teacher-forced logits `[batch·N, mu_channels]` for `units: [batch, U]`,
    /// `prev: [batch, N]` with `N = U · s1 · s2`. Caches everything for [`Vocoder::backward`].
    pub fn forward(
        &mut self,
        units: &[usize],
        speakers: &[usize],
        prev: &[usize],
        batch: usize,
    ) -> Result<Tensor<T>, ModelError> {
        if batch == 0 || speakers.len() != batch || units.len() % batch != 0 {
            return Err(ModelError::Dim { expected: batch, got: speakers.len() });
        }
        self.check_indices(units, speakers)?;
        let cfg = self.config.clone();
        let n_units = units.len() / batch;
        let n = n_units * cfg.samples_per_unit();
        if prev.len() != batch * n {
            return Err(ModelError::LengthMismatch { expected: batch * n, got: prev.len() });
        }
        let c0 = cfg.code_dim + cfg.speaker_dim;
        let x0 = self.unit_input(units, speakers, batch)?;
        let l1 = n_units * cfg.chain.s1;
        let u1 = self.up1.forward(&x0, batch, n_units, c0)?;
        let h1 = self.frame_lstm.forward_seq(&Tensor::from_vec(&[batch, l1, c0], u1)?)?;
        let u2 = self.up2.forward(h1.data(), batch, l1, cfg.frame_hidden)?;
        let me = self.mu_emb.forward(prev)?;
        let x2 = concat_last(&u2, cfg.frame_hidden, me.data(), cfg.mu_dim);
        let h2 = self
            .sample_lstm
            .forward_seq(&Tensor::from_vec(&[batch, n, cfg.frame_hidden + cfg.mu_dim], x2)?)?;
        let h2 = h2.reshape(&[batch * n, cfg.sample_hidden])?;
        let mut f1 = self.fc1.forward(&h2)?;
        relu_inplace(f1.data_mut());
        let logits = self.fc2.forward(&f1)?;
        self.cache = Some(Box::new(ForwardCache {
            units: units.to_vec(),
            speakers: speakers.to_vec(),
            prev: prev.to_vec(),
            batch,
            n_units,
            fc1_out: f1.into_data(),
        }));
        Ok(logits)
    }

    /// Accumulate parameter gradients for upstream `grad_logits`.
    pub fn backward(&mut self, grad_logits: &Tensor<T>) -> Result<(), ModelError> {
        let cache = self.cache.take().ok_or(crate::nn::NnError::NoCache("vocoder"))?;
        let cfg = self.config.clone();
        let (batch, n_units) = (cache.batch, cache.n_units);
        let n = n_units * cfg.samples_per_unit();
        let l1 = n_units * cfg.chain.s1;
        let mut g = self.fc2.backward(grad_logits)?;
        relu_backward_inplace(&cache.fc1_out, g.data_mut());
        let g = self.fc1.backward(&g)?;
        let g = self.sample_lstm.backward_seq(&g.reshape(&[batch, n, cfg.sample_hidden])?)?;
        let (du2, dme) = split_last(g.data(), cfg.frame_hidden, cfg.mu_dim);
        self.mu_emb.backward(&cache.prev, &Tensor::from_vec(&[batch * n, cfg.mu_dim], dme)?)?;
        let dh1 = self.up2.backward(&du2)?;
        let dx1 = self.frame_lstm.backward_seq(&Tensor::from_vec(&[batch, l1, cfg.frame_hidden], dh1)?)?;
        let dx0 = self.up1.backward(dx1.data())?;
        let (dce, dse_full) = split_last(&dx0, cfg.code_dim, cfg.speaker_dim);
        self.code_emb.backward(&cache.units, &Tensor::from_vec(&[batch * n_units, cfg.code_dim], dce)?)?;
        let ds = cfg.speaker_dim;
        let mut dse = vec![T::zero(); batch * ds];
        for b in 0..batch {
            for u in 0..n_units {
                for j in 0..ds {
                    dse[b * ds + j] += dse_full[(b * n_units + u) * ds + j];
                }
            }
        }
        self.speaker_emb.backward(&cache.speakers, &Tensor::from_vec(&[batch, ds], dse)?)?;
        Ok(())
    }

    /// Frame-LSTM features upsampled to the sample rate, `[N, frame_hidden]`, for one utterance.
    pub fn conditioning(&self, units: &[usize], speaker: usize) -> Result<Vec<T>, ModelError> {
        self.check_indices(units, &[speaker])?;
        let cfg = &self.config;
        let c0 = cfg.code_dim + cfg.speaker_dim;
        let x0 = self.unit_input(units, &[speaker], 1)?;
        let u1 = self.up1.apply(&x0, 1, units.len(), c0)?;
        let l1 = units.len() * cfg.chain.s1;
        let h1 = self.frame_lstm.infer_seq(&Tensor::from_vec(&[1, l1, c0], u1)?)?;
        self.up2.apply(h1.data(), 1, l1, cfg.frame_hidden)
    }
}

impl<T: Real> Module<T> for Vocoder<T> {
    fn visit_params(&self, f: &mut dyn FnMut(&str, &Tensor<T>)) {
        visit_child("code_emb", &self.code_emb, f);
        visit_child("speaker_emb", &self.speaker_emb, f);
        if let Some(p) = &self.up1.post {
            visit_child("up1_post", p, f);
        }
        visit_child("frame_lstm", &self.frame_lstm, f);
        if let Some(p) = &self.up2.post {
            visit_child("up2_post", p, f);
        }
        visit_child("mu_emb", &self.mu_emb, f);
        visit_child("sample_lstm", &self.sample_lstm, f);
        visit_child("fc1", &self.fc1, f);
        visit_child("fc2", &self.fc2, f);
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        visit_child_mut("code_emb", &mut self.code_emb, f);
        visit_child_mut("speaker_emb", &mut self.speaker_emb, f);
        if let Some(p) = &mut self.up1.post {
            visit_child_mut("up1_post", p, f);
        }
        visit_child_mut("frame_lstm", &mut self.frame_lstm, f);
        if let Some(p) = &mut self.up2.post {
            visit_child_mut("up2_post", p, f);
        }
        visit_child_mut("mu_emb", &mut self.mu_emb, f);
        visit_child_mut("sample_lstm", &mut self.sample_lstm, f);
        visit_child_mut("fc1", &mut self.fc1, f);
        visit_child_mut("fc2", &mut self.fc2, f);
    }
}

/// Previous-sample codes for teacher forcing: `[start, teacher[0], …, teacher[N−2]]`.
pub fn shift_teacher(teacher: &[usize], start: usize) -> Vec<usize> {
    let mut prev = Vec::with_capacity(teacher.len());
    if !teacher.is_empty() {
        prev.push(start);
        prev.extend_from_slice(&teacher[..teacher.len() - 1]);
    }
    prev
}

/// Teacher-forced logits `[len(units)·2·hop, mu_channels]` for one utterance.
/// The first sample is conditioned on the mid-scale (silence) code.
pub fn vocoder_forward<T: Real>(
    vocoder: &mut Vocoder<T>,
    units: &[usize],
    speaker: usize,
    teacher: &[usize],
) -> Result<Tensor<T>, ModelError> {
    let expected = units.len() * vocoder.config.samples_per_unit();
    if teacher.len() != expected {
        return Err(ModelError::LengthMismatch { expected, got: teacher.len() });
    }
    let prev = shift_teacher(teacher, vocoder.config.mu_channels / 2);
    vocoder.forward(units, &[speaker], &prev, 1)
}

fn softmax_sample<R: Rng + ?Sized>(logits: &[f64], temperature: f64, rng: &mut R) -> usize {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = logits.iter().map(|&l| ((l - max) / temperature).exp()).collect();
    let total: f64 = weights.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (i, w) in weights.iter().enumerate() {
        u -= w;
        if u <= 0.0 {
            return i;
        }
    }
    weights.len() - 1
}

/// Autoregressive synthesis of exactly `len(units)·2·hop` samples.
pub fn vocoder_generate<T: Real>(
    vocoder: &Vocoder<T>,
    units: &[usize],
    speaker: usize,
    sampling: Sampling,
    seed: u64,
) -> Result<Waveform, ModelError> {
    let cfg = &vocoder.config;
    let n = units.len() * cfg.samples_per_unit();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut samples = Vec::with_capacity(n);
    if n > 0 {
        let cond = vocoder.conditioning(units, speaker)?;
        let (fh, md, hd) = (cfg.frame_hidden, cfg.mu_dim, cfg.sample_hidden);
        let mut state = LstmState::zeros(1, hd);
        let mut prev = cfg.mu_channels / 2;
        let mut x = vec![T::zero(); fh + md];
        let mut f1 = vec![T::zero(); cfg.fc_dim];
        let mut logits = vec![T::zero(); cfg.mu_channels];
        let b1 = vocoder.fc1.bias.as_ref().map(|b| b.data().to_vec());
        let b2 = vocoder.fc2.bias.as_ref().map(|b| b.data().to_vec());
        for t in 0..n {
            x[..fh].copy_from_slice(&cond[t * fh..(t + 1) * fh]);
            x[fh..].copy_from_slice(&vocoder.mu_emb.table.data()[prev * md..(prev + 1) * md]);
            state = vocoder.sample_lstm.step(&x, &state, 1)?;
            match &b1 {
                Some(b) => f1.copy_from_slice(b),
                None => f1.fill(T::zero()),
            }
            gemm_abt(&state.h, vocoder.fc1.weight.data(), 1, hd, cfg.fc_dim, &mut f1);
            relu_inplace(&mut f1);
            match &b2 {
                Some(b) => logits.copy_from_slice(b),
                None => logits.fill(T::zero()),
            }
            gemm_abt(&f1, vocoder.fc2.weight.data(), 1, cfg.fc_dim, cfg.mu_channels, &mut logits);
            let code = match sampling {
                Sampling::Argmax => {
                    let mut best = 0;
                    for (i, &l) in logits.iter().enumerate() {
                        if l > logits[best] {
                            best = i;
                        }
                    }
                    best
                }
                Sampling::Temperature(tau) => {
                    let l: Vec<f64> = logits.iter().map(|v| v.f64()).collect();
                    softmax_sample(&l, tau.max(1e-6), &mut rng)
                }
            };
            samples.push(mulaw_decode(code, cfg.mu_channels) as f32);
            prev = code;
        }
    }
    Waveform::new(samples, cfg.sample_rate).map_err(|e| ModelError::Config(e.to_string()))
}

/// Mu-law codes of a waveform slice.
pub fn mulaw_codes(samples: &[f32], channels: usize) -> Vec<usize> {
    samples.iter().map(|&s| mulaw_encode(s as f64, channels)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::softmax_xent;

    fn tiny(chain: ScaleChain, kinds: [Upsampler; 2]) -> VocoderConfig {
        VocoderConfig {
            code_dim: 3,
            speaker_dim: 2,
            frame_hidden: 3,
            mu_dim: 2,
            sample_hidden: 4,
            fc_dim: 5,
            mu_channels: 16,
            chain,
            upsamplers: kinds,
            ..VocoderConfig::toy(6, 3)
        }
    }

    #[test]
    fn logit_rows_follow_unit_geometry() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for (chain, units) in [(ScaleChain::new(2, 160, 160), 10), (ScaleChain::new(10, 16, 80), 51)] {
            let mut v = Vocoder::<f32>::new(&tiny(chain, [Upsampler::Linear; 2]), &mut rng).unwrap();
            let u: Vec<usize> = (0..units).map(|i| i % 6).collect();
            let n = units * 2 * chain.hop;
            let logits = vocoder_forward(&mut v, &u, 1, &vec![3; n]).unwrap();
            assert_eq!(logits.shape(), &[n, 16]);
        }
        assert_eq!(10 * 2 * 160, 3200);
        assert_eq!(51 * 2 * 80, 8160);
    }

    #[test]
    fn teacher_length_checked() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut v = Vocoder::<f32>::new(&tiny(ScaleChain::new(4, 8, 16), [Upsampler::Nearest; 2]), &mut rng).unwrap();
        let err = vocoder_forward(&mut v, &[1, 2], 0, &[0; 63]).unwrap_err();
        assert!(matches!(err, ModelError::LengthMismatch { expected: 64, got: 63 }));
    }

    #[test]
    fn speaker_reaches_output() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut v = Vocoder::<f64>::new(&tiny(ScaleChain::new(4, 8, 16), [Upsampler::Linear; 2]), &mut rng).unwrap();
        let units = [0, 4, 5];
        let teacher = vec![7; 96];
        let a = vocoder_forward(&mut v, &units, 0, &teacher).unwrap();
        let b = vocoder_forward(&mut v, &units, 2, &teacher).unwrap();
        assert!(a.data().iter().zip(b.data()).any(|(x, y)| (x - y).abs() > 1e-9));
    }

    #[test]
    fn generation_length_and_determinism() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let v = Vocoder::<f32>::new(&tiny(ScaleChain::new(4, 8, 16), [Upsampler::FourierTile; 2]), &mut rng).unwrap();
        for n in [0usize, 1, 5] {
            let units: Vec<usize> = (0..n).collect();
            let a = vocoder_generate(&v, &units, 1, Sampling::Argmax, 0).unwrap();
            assert_eq!(a.len(), n * 32);
            let b = vocoder_generate(&v, &units, 1, Sampling::Argmax, 9).unwrap();
            assert_eq!(a.samples(), b.samples());
        }
        let s1 = vocoder_generate(&v, &[1, 2], 0, Sampling::Temperature(1.0), 5).unwrap();
        let s2 = vocoder_generate(&v, &[1, 2], 0, Sampling::Temperature(1.0), 5).unwrap();
        assert_eq!(s1.samples(), s2.samples());
    }

    #[test]
    fn teacher_forced_logits_match_generation_path() {
        // the step-by-step inference path must agree with the batched forward
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut v = Vocoder::<f64>::new(&tiny(ScaleChain::new(4, 8, 16), [Upsampler::FourierPad, Upsampler::FourierTile]), &mut rng).unwrap();
        let units = [3, 1];
        let wave = vocoder_generate(&v, &units, 2, Sampling::Argmax, 0).unwrap();
        let codes = mulaw_codes(wave.samples(), 16);
        let logits = vocoder_forward(&mut v, &units, 2, &codes).unwrap();
        for (t, row) in logits.data().chunks(16).enumerate() {
            let best = (0..16).fold(0, |b, i| if row[i] > row[b] { i } else { b });
            assert_eq!(best, codes[t], "sample {t}");
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        for kinds in [
            [Upsampler::Nearest, Upsampler::Linear],
            [Upsampler::FourierTile, Upsampler::FourierPad],
        ] {
            let mut rng = ChaCha8Rng::seed_from_u64(5);
            let mut v = Vocoder::<f64>::new(&tiny(ScaleChain::new(2, 4, 4), kinds), &mut rng).unwrap();
            let units = [1, 5, 2, 0, 3, 3];
            let speakers = [2, 0];
            let targets: Vec<usize> = (0..48).map(|i| (i * 7) % 16).collect();
            let prev: Vec<usize> = (0..48).map(|i| (i * 5 + 3) % 16).collect();
            let loss = |v: &mut Vocoder<f64>| {
                let l = v.forward(&units, &speakers, &prev, 2).unwrap();
                softmax_xent(&l, &targets).unwrap()
            };
            v.zero_grad();
            let (_, g) = loss(&mut v);
            v.backward(&g).unwrap();
            let mut analytic = Vec::new();
            v.visit_params(&mut |n, p| analytic.push((n.to_string(), p.grad().unwrap().to_vec())));
            let eps = 1e-6;
            let mut worst = 0.0f64;
            for (name, grads) in &analytic {
                for i in (0..grads.len()).step_by(2) {
                    let shift = |v: &mut Vocoder<f64>, delta: f64| {
                        v.visit_params_mut(&mut |n, p| {
                            if n == name {
                                p.data_mut()[i] += delta;
                            }
                        })
                    };
                    shift(&mut v, eps);
                    let lp = loss(&mut v).0;
                    shift(&mut v, -2.0 * eps);
                    let lm = loss(&mut v).0;
                    shift(&mut v, eps);
                    let n = (lp - lm) / (2.0 * eps);
                    worst = worst.max((grads[i] - n).abs() / grads[i].abs().max(n.abs()).max(1e-3));
                }
            }
            assert!(worst < 1e-5, "{kinds:?}: {worst}");
        }
    }
}
