use super::{Module, NnError, Real, Tensor};

/// Layer normalisation over the last axis of `[rows, channels]` with learned gain and bias.
#[derive(Debug, Clone)]
pub struct LayerNorm<T: Real> {
    pub gain: Tensor<T>,
    pub bias: Tensor<T>,
    pub eps: f64,
    cache: Option<(Vec<T>, Vec<T>)>,
}

impl<T: Real> LayerNorm<T> {
    pub fn new(channels: usize) -> Self {
        Self {
            gain: Tensor::from_vec(&[channels], vec![T::one(); channels]).unwrap().with_grad(),
            bias: Tensor::zeros(&[channels]).with_grad(),
            eps: 1e-5,
            cache: None,
        }
    }

    fn normalise(&self, x: &Tensor<T>) -> Result<(Vec<T>, Vec<T>, Vec<T>), NnError> {
        let c = self.gain.numel();
        if x.shape().last() != Some(&c) {
            return Err(NnError::Shape {
                op: "layer_norm",
                expected: vec![c],
                got: x.shape().to_vec(),
            });
        }
        let eps = T::of(self.eps);
        let n = T::of(c as f64);
        let mut xhat = Vec::with_capacity(x.numel());
        let mut inv_std = Vec::with_capacity(x.numel() / c.max(1));
        let mut y = Vec::with_capacity(x.numel());
        for row in x.data().chunks(c) {
            let mean = row.iter().copied().sum::<T>() / n;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
            let is = T::one() / (var + eps).sqrt();
            inv_std.push(is);
            for (i, &v) in row.iter().enumerate() {
                let h = (v - mean) * is;
                xhat.push(h);
                y.push(h * self.gain.data()[i] + self.bias.data()[i]);
            }
        }
        Ok((y, xhat, inv_std))
    }

    pub fn forward(&mut self, x: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        let (y, xhat, inv_std) = self.normalise(x)?;
        self.cache = Some((xhat, inv_std));
        Tensor::from_vec(x.shape(), y)
    }

    pub fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        let (y, _, _) = self.normalise(x)?;
        Tensor::from_vec(x.shape(), y)
    }

    pub fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        let (xhat, inv_std) = self.cache.take().ok_or(NnError::NoCache("layer_norm"))?;
        let c = self.gain.numel();
        let n = T::of(c as f64);
        let g = grad_out.data();
        if g.len() != xhat.len() {
            return Err(NnError::Shape {
                op: "layer_norm backward",
                expected: vec![xhat.len()],
                got: grad_out.shape().to_vec(),
            });
        }
        let mut dx = vec![T::zero(); g.len()];
        {
            let dgain = self.gain.grad_mut();
            for (gr, hr) in g.chunks(c).zip(xhat.chunks(c)) {
                for i in 0..c {
                    dgain[i] += gr[i] * hr[i];
                }
            }
        }
        {
            let dbias = self.bias.grad_mut();
            for gr in g.chunks(c) {
                for i in 0..c {
                    dbias[i] += gr[i];
                }
            }
        }
        let gain = self.gain.data();
        for (r, ((gr, hr), dr)) in g.chunks(c).zip(xhat.chunks(c)).zip(dx.chunks_mut(c)).enumerate() {
            let dh: Vec<T> = (0..c).map(|i| gr[i] * gain[i]).collect();
            let mean_dh = dh.iter().copied().sum::<T>() / n;
            let mean_dh_h = dh.iter().zip(hr).map(|(a, b)| *a * *b).sum::<T>() / n;
            for i in 0..c {
                dr[i] = inv_std[r] * (dh[i] - mean_dh - hr[i] * mean_dh_h);
            }
        }
        Tensor::from_vec(grad_out.shape(), dx)
    }
}

impl<T: Real> Module<T> for LayerNorm<T> {
    fn visit_params(&self, f: &mut dyn FnMut(&str, &Tensor<T>)) {
        f("gain", &self.gain);
        f("bias", &self.bias);
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        f("gain", &mut self.gain);
        f("bias", &mut self.bias);
    }
}
