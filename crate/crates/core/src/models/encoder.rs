use rand::Rng;
use serde::{Deserialize, Serialize};

use super::cpc::cpc_infonce_loss;
use super::vq::{vq_backward, vq_quantize, Codebook};
use super::ModelError;
use crate::audio::MelSpectrogram;
use crate::nn::ops::{relu_backward_inplace, relu_inplace, transpose_last2};
use crate::nn::{visit_child, visit_child_mut, Conv1d, LayerNorm, Linear, Lstm, Module, Real, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderConfig {
    pub n_mels: usize,
    /// Width of both convolution layers.
    pub channels: usize,
    pub code_dim: usize,
    pub codebook_size: usize,
    pub context_dim: usize,
    /// CPC prediction horizon K.
    pub horizon: usize,
    pub negatives: usize,
    /// Commitment weight β.
    pub commitment: f64,
    #[serde(default = "yes")]
    pub layer_norm: bool,
    /// Steps without selection after which a code is reinitialised; 0 disables.
    #[serde(default = "default_dead")]
    pub dead_code_steps: u64,
}

fn yes() -> bool {
    true
}
fn default_dead() -> u64 {
    200
}

impl EncoderConfig {
    pub fn full() -> Self {
        Self {
            n_mels: 80,
            channels: 256,
            code_dim: 64,
            codebook_size: 512,
            context_dim: 256,
            horizon: 4,
            negatives: 16,
            commitment: 0.25,
            layer_norm: true,
            dead_code_steps: 200,
        }
    }

    pub fn toy(n_mels: usize) -> Self {
        Self {
            n_mels,
            channels: 32,
            code_dim: 8,
            codebook_size: 32,
            context_dim: 32,
            ..Self::full()
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let positive = [
            ("n_mels", self.n_mels),
            ("channels", self.channels),
            ("code_dim", self.code_dim),
            ("codebook_size", self.codebook_size),
            ("context_dim", self.context_dim),
            ("horizon", self.horizon),
            ("negatives", self.negatives),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(ModelError::Config(format!("encoder.{name} must be ≥ 1")));
            }
        }
        if !(self.commitment >= 0.0) {
            return Err(ModelError::Config("encoder.commitment must be ≥ 0".into()));
        }
        Ok(())
    }
}

/// Conv stack (×2 downsampling) → linear → VQ → LSTM context → K linear predictors.
#[derive(Debug, Clone)]
pub struct Encoder<T: Real> {
    pub config: EncoderConfig,
    pub conv1: Conv1d<T>,
    pub norm1: LayerNorm<T>,
    pub conv2: Conv1d<T>,
    pub norm2: LayerNorm<T>,
    pub proj: Linear<T>,
    pub codebook: Codebook<T>,
    pub context: Lstm<T>,
    pub predictors: Vec<Linear<T>>,
}

/// Losses and diagnostics of one training forward/backward pass.
#[derive(Debug, Clone)]
pub struct EncoderGrads {
    pub loss: f64,
    pub infonce: f64,
    pub vq_loss: f64,
    pub commit_loss: f64,
    pub accuracy: Vec<f64>,
    pub indices: Vec<usize>,
}

struct Trunk<T> {
    z: Vec<T>,
    act1: Vec<T>,
    act2: Vec<T>,
    frames: usize,
    time: usize,
}
impl<T: Real> Encoder<T> {
    pub fn new<R: Rng + ?Sized>(config: &EncoderConfig, rng: &mut R) -> Result<Self, ModelError> {
        config.validate()?;
        let c = config.channels;
        Ok(Self {
            conv1: Conv1d::new(config.n_mels, c, 3, 1, 1, true, rng),
            norm1: LayerNorm::new(c),
            conv2: Conv1d::new(c, c, 4, 2, 1, true, rng),
            norm2: LayerNorm::new(c),
            proj: Linear::new(c, config.code_dim, true, rng),
            codebook: Codebook::new(config.codebook_size, config.code_dim, rng),
            context: Lstm::new(config.code_dim, config.context_dim, rng),
            predictors: (0..config.horizon)
                .map(|_| Linear::new(config.context_dim, config.code_dim, false, rng))
                .collect(),
            config: config.clone(),
        })
    }

    /// Unit frames produced from `frames` mel frames.
    pub fn output_len(frames: usize) -> usize {
        frames / 2
    }

    fn check_input(&self, mel: &Tensor<T>) -> Result<(usize, usize), ModelError> {
        mel.expect_rank("encoder", 3)?;
        let (b, m, t) = (mel.shape()[0], mel.shape()[1], mel.shape()[2]);
        if m != self.config.n_mels {
            return Err(ModelError::Dim { expected: self.config.n_mels, got: m });
        }
        if t < 2 {
            return Err(ModelError::TooShort { frames: t, min: 2 });
        }
        Ok((b, t))
    }

    /// `mel: [batch, n_mels, T]` → pre-quantisation rows `z: [batch·⌊T/2⌋, d]`, caching for backward.
    fn trunk(&mut self, mel: &Tensor<T>) -> Result<Trunk<T>, ModelError> {
        let (b, t) = self.check_input(mel)?;
        let c = self.config.channels;
        let mut h = self.conv1.forward(mel)?;
        relu_inplace(h.data_mut());
        let act1 = h.data().to_vec();
        let mut h = Tensor::from_vec(&[b, t, c], transpose_last2(h.data(), b, c, t))?;
        if self.config.layer_norm {
            h = self.norm1.forward(&h)?;
        }
        let h = Tensor::from_vec(&[b, c, t], transpose_last2(h.data(), b, t, c))?;
        let mut h = self.conv2.forward(&h)?;
        let t2 = h.shape()[2];
        relu_inplace(h.data_mut());
        let act2 = h.data().to_vec();
        let mut h = Tensor::from_vec(&[b * t2, c], transpose_last2(h.data(), b, c, t2))?;
        if self.config.layer_norm {
            h = self.norm2.forward(&h)?;
        }
        let z = self.proj.forward(&h)?;
        Ok(Trunk {
            z: z.into_data(),
            act1,
            act2,
            frames: t,
            time: t2,
        })
    }

    fn trunk_infer(&self, mel: &Tensor<T>) -> Result<(Vec<T>, usize), ModelError> {
        let (b, t) = self.check_input(mel)?;
        let c = self.config.channels;
        let mut h = self.conv1.infer(mel)?;
        relu_inplace(h.data_mut());
        let mut h = Tensor::from_vec(&[b, t, c], transpose_last2(h.data(), b, c, t))?;
        if self.config.layer_norm {
            h = self.norm1.infer(&h)?;
        }
        let h = Tensor::from_vec(&[b, c, t], transpose_last2(h.data(), b, t, c))?;
        let mut h = self.conv2.infer(&h)?;
        let t2 = h.shape()[2];
        relu_inplace(h.data_mut());
        let mut h = Tensor::from_vec(&[b * t2, c], transpose_last2(h.data(), b, c, t2))?;
        if self.config.layer_norm {
            h = self.norm2.infer(&h)?;
        }
        Ok((self.proj.infer(&h)?.into_data(), t2))
    }

    fn trunk_backward(&mut self, trunk: &Trunk<T>, batch: usize, grad_z: Vec<T>) -> Result<(), ModelError> {
        let c = self.config.channels;
        let (t, t2) = (trunk.frames, trunk.time);
        let mut g = self.proj.backward(&Tensor::from_vec(&[batch * t2, self.config.code_dim], grad_z)?)?;
        if self.config.layer_norm {
            g = self.norm2.backward(&g)?;
        }
        let mut g = transpose_last2(g.data(), batch, t2, c);
        relu_backward_inplace(&trunk.act2, &mut g);
        let g = self.conv2.backward(&Tensor::from_vec(&[batch, c, t2], g)?)?;
        let mut g = Tensor::from_vec(&[batch, t, c], transpose_last2(g.data(), batch, c, t))?;
        if self.config.layer_norm {
            g = self.norm1.backward(&g)?;
        }
        let mut g = transpose_last2(g.data(), batch, t, c);
        relu_backward_inplace(&trunk.act1, &mut g);
        self.conv1.backward(&Tensor::from_vec(&[batch, c, t], g)?)?;
        Ok(())
    }

    /// One training pass on `mel: [batch, n_mels, T]`: InfoNCE + VQ + commitment loss,
    /// gradients accumulated into every parameter.
    pub fn loss_and_grads<R: Rng + ?Sized>(&mut self, mel: &Tensor<T>, rng: &mut R) -> Result<EncoderGrads, ModelError> {
        let batch = mel.shape().first().copied().unwrap_or(0);
        let trunk = self.trunk(mel)?;
        let beta = self.config.commitment;
        let vq = vq_quantize(&self.codebook, &trunk.z, beta)?;
        let d = self.config.code_dim;
        let t2 = trunk.time;
        let zq = Tensor::from_vec(&[batch, t2, d], vq.z_q.clone())?;
        let ctx = self.context.forward_seq(&zq)?;
        let nce = cpc_infonce_loss(
            ctx.data(),
            &vq.z_q,
            batch,
            t2,
            &mut self.predictors,
            self.config.negatives,
            rng,
        )?;
        let dctx = Tensor::from_vec(ctx.shape(), nce.grad_context.clone())?;
        let mut dzq = self.context.backward_seq(&dctx)?.into_data();
        for (a, b) in dzq.iter_mut().zip(&nce.grad_targets) {
            *a += *b;
        }
        let dz = vq_backward(&mut self.codebook, &trunk.z, &vq, &dzq, beta);
        self.trunk_backward(&trunk, batch, dz)?;
        Ok(EncoderGrads {
            loss: nce.loss + vq.vq_loss + vq.commit_loss,
            infonce: nce.loss,
            vq_loss: vq.vq_loss,
            commit_loss: vq.commit_loss,
            accuracy: nce.accuracy,
            indices: vq.indices,
        })
    }

    /// InfoNCE pass over given unit indices `[batch, time]` (row-major), bypassing the
    /// convolutional trunk. Targets are codebook rows; gradients reach the codebook,
    /// context network and predictors.
    pub fn code_loss_and_grads<R: Rng + ?Sized>(
        &mut self,
        codes: &[usize],
        batch: usize,
        time: usize,
        rng: &mut R,
    ) -> Result<EncoderGrads, ModelError> {
        let d = self.config.code_dim;
        let v = self.codebook.size();
        if codes.len() != batch * time {
            return Err(ModelError::Dim { expected: batch * time, got: codes.len() });
        }
        if let Some(&bad) = codes.iter().find(|&&i| i >= v) {
            return Err(ModelError::Dim { expected: v, got: bad });
        }
        let mut z_q = Vec::with_capacity(codes.len() * d);
        for &i in codes {
            z_q.extend_from_slice(self.codebook.row(i));
        }
        let ctx = self.context.forward_seq(&Tensor::from_vec(&[batch, time, d], z_q.clone())?)?;
        let nce = cpc_infonce_loss(ctx.data(), &z_q, batch, time, &mut self.predictors, self.config.negatives, rng)?;
        let dctx = Tensor::from_vec(ctx.shape(), nce.grad_context.clone())?;
        let dzq = self.context.backward_seq(&dctx)?.into_data();
        let table = self.codebook.entries.grad_mut();
        for (r, &i) in codes.iter().enumerate() {
            for j in 0..d {
                table[i * d + j] += dzq[r * d + j] + nce.grad_targets[r * d + j];
            }
        }
        Ok(EncoderGrads {
            loss: nce.loss,
            infonce: nce.loss,
            vq_loss: 0.0,
            commit_loss: 0.0,
            accuracy: nce.accuracy,
            indices: codes.to_vec(),
        })
    }

    /// Pre-quantisation rows `[batch·⌊T/2⌋, d]` without recording caches.
    pub fn embed(&self, mel: &Tensor<T>) -> Result<Vec<T>, ModelError> {
        Ok(self.trunk_infer(mel)?.0)
    }
}

impl<T: Real> Module<T> for Encoder<T> {
    fn visit_params(&self, f: &mut dyn FnMut(&str, &Tensor<T>)) {
        visit_child("conv1", &self.conv1, f);
        visit_child("norm1", &self.norm1, f);
        visit_child("conv2", &self.conv2, f);
        visit_child("norm2", &self.norm2, f);
        visit_child("proj", &self.proj, f);
        visit_child("codebook", &self.codebook, f);
        visit_child("context", &self.context, f);
        for (k, p) in self.predictors.iter().enumerate() {
            visit_child(&format!("predictor{}", k + 1), p, f);
        }
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        visit_child_mut("conv1", &mut self.conv1, f);
        visit_child_mut("norm1", &mut self.norm1, f);
        visit_child_mut("conv2", &mut self.conv2, f);
        visit_child_mut("norm2", &mut self.norm2, f);
        visit_child_mut("proj", &mut self.proj, f);
        visit_child_mut("codebook", &mut self.codebook, f);
        visit_child_mut("context", &mut self.context, f);
        for (k, p) in self.predictors.iter_mut().enumerate() {
            visit_child_mut(&format!("predictor{}", k + 1), p, f);
        }
    }
}

/// Encode one utterance: returns context features `[⌊T/2⌋, context_dim]` and unit indices.
pub fn encode<T: Real>(encoder: &Encoder<T>, mel: &MelSpectrogram) -> Result<(Tensor<T>, Vec<usize>), ModelError> {
    let x = Tensor::from_vec(
        &[1, mel.n_mels, mel.n_frames],
        mel.values.iter().map(|&v| T::of(v)).collect(),
    )?;
    let (z, time) = encoder.trunk_infer(&x)?;
    let vq = vq_quantize(&encoder.codebook, &z, encoder.config.commitment)?;
    let zq = Tensor::from_vec(&[1, time, encoder.config.code_dim], vq.z_q)?;
    let ctx = encoder.context.infer_seq(&zq)?;
    let ctx = ctx.reshape(&[time, encoder.config.context_dim])?;
    Ok((ctx, vq.indices))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio::NormState;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny() -> EncoderConfig {
        EncoderConfig {
            n_mels: 5,
            channels: 6,
            code_dim: 3,
            codebook_size: 7,
            context_dim: 4,
            horizon: 2,
            negatives: 3,
            ..EncoderConfig::full()
        }
    }

    fn mel(n_mels: usize, frames: usize, seed: u64) -> MelSpectrogram {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let values = (0..n_mels * frames).map(|_| rng.random_range(0.0..1.0)).collect();
        MelSpectrogram::new(n_mels, frames, values, "test", NormState::MinMax { min: 0.0, max: 1.0 })
    }

    #[test]
    fn halves_frame_count_with_valid_indices() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let enc = Encoder::<f32>::new(&tiny(), &mut rng).unwrap();
        for frames in 2..24 {
            let (ctx, idx) = encode(&enc, &mel(5, frames, frames as u64)).unwrap();
            assert_eq!(idx.len(), frames / 2);
            assert_eq!(ctx.shape(), &[frames / 2, 4]);
            assert!(idx.iter().all(|&i| i < 7));
        }
    }

    #[test]
    fn deterministic_and_rejects_short_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let enc = Encoder::<f32>::new(&tiny(), &mut rng).unwrap();
        let m = mel(5, 17, 3);
        assert_eq!(encode(&enc, &m).unwrap().1, encode(&enc, &m).unwrap().1);
        assert!(matches!(encode(&enc, &mel(5, 1, 0)), Err(ModelError::TooShort { .. })));
    }

    fn fd_worst<F: FnMut(&mut Encoder<f64>) -> f64>(
        enc: &Encoder<f64>,
        analytic: &[(String, Vec<f64>)],
        keep: impl Fn(&str) -> bool,
        mut loss: F,
    ) -> f64 {
        let eps = 1e-6;
        let mut worst = 0.0f64;
        for (name, grads) in analytic.iter().filter(|(n, _)| keep(n)) {
            for i in (0..grads.len()).step_by(2) {
                let shift = |e: &mut Encoder<f64>, delta: f64| {
                    e.visit_params_mut(&mut |n, p| {
                        if n == name {
                            p.data_mut()[i] += delta;
                        }
                    })
                };
                let mut e = enc.clone();
                shift(&mut e, eps);
                let lp = loss(&mut e);
                shift(&mut e, -2.0 * eps);
                let lm = loss(&mut e);
                let n = (lp - lm) / (2.0 * eps);
                worst = worst.max((grads[i] - n).abs() / grads[i].abs().max(n.abs()).max(1e-3));
            }
        }
        worst
    }

    fn grads_of(enc: &Encoder<f64>) -> Vec<(String, Vec<f64>)> {
        let mut out = Vec::new();
        enc.visit_params(&mut |n, p| out.push((n.to_string(), p.grad().unwrap().to_vec())));
        out
    }

    #[test]
    fn trunk_backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut enc = Encoder::<f64>::new(&tiny(), &mut rng).unwrap();
        let x = Tensor::from_vec(&[2, 5, 7], mel(5, 14, 4).values).unwrap();
        let w: Vec<f64> = (0..2 * 3 * 3).map(|_| rng.random_range(-1.0..1.0)).collect();
        enc.zero_grad();
        let trunk = enc.trunk(&x).unwrap();
        enc.trunk_backward(&trunk, 2, w.clone()).unwrap();
        let analytic = grads_of(&enc);
        let trunk_param = |n: &str| ["conv1", "norm1", "conv2", "norm2", "proj"].iter().any(|p| n.starts_with(p));
        let worst = fd_worst(&enc, &analytic, trunk_param, |e| {
            e.embed(&x).unwrap().iter().zip(&w).map(|(a, b)| a * b).sum()
        });
        assert!(worst < 1e-6, "{worst}");
    }

    #[test]
    fn context_and_predictor_gradients_are_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut enc = Encoder::<f64>::new(&tiny(), &mut rng).unwrap();
        let x = Tensor::from_vec(&[2, 5, 7], mel(5, 14, 5).values).unwrap();
        let loss = |e: &mut Encoder<f64>| {
            let mut r = ChaCha8Rng::seed_from_u64(7);
            e.loss_and_grads(&x, &mut r).unwrap().loss
        };
        enc.zero_grad();
        loss(&mut enc);
        let analytic = grads_of(&enc);
        let downstream = |n: &str| n.starts_with("context") || n.starts_with("predictor");
        let worst = fd_worst(&enc, &analytic, downstream, loss);
        assert!(worst < 1e-6, "{worst}");
    }

    #[test]
    fn code_path_gradients_are_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut enc = Encoder::<f64>::new(&tiny(), &mut rng).unwrap();
        let v = enc.codebook.size();
        let codes: Vec<usize> = (0..2 * 7).map(|i| (i * 5 + 1) % v).collect();
        let loss = |e: &mut Encoder<f64>| {
            let mut r = ChaCha8Rng::seed_from_u64(9);
            e.code_loss_and_grads(&codes, 2, 7, &mut r).unwrap().loss
        };
        enc.zero_grad();
        loss(&mut enc);
        let analytic = grads_of(&enc);
        let used = |n: &str| n.starts_with("codebook") || n.starts_with("context") || n.starts_with("predictor");
        let worst = fd_worst(&enc, &analytic, used, loss);
        assert!(worst < 1e-6, "{worst}");
        assert!(enc.code_loss_and_grads(&[v], 1, 1, &mut rng).is_err());
    }
}
