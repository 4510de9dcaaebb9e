use rand::Rng;

use super::{Module, NnError, Real, Tensor};

pub fn conv1d_out_len(len: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    let padded = len + 2 * padding;
    (padded >= kernel && stride > 0).then(|| (padded - kernel) / stride + 1)
}

/// Cross-correlation of `x: [batch, C_in, T]` with `w: [C_out, C_in, k]`.
pub fn conv1d_forward<T: Real>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    stride: usize,
    padding: usize,
) -> Result<Tensor<T>, NnError> {
    x.expect_rank("conv1d", 3)?;
    let (batch, c_in, len) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (c_out, k) = (weight.shape()[0], weight.shape()[2]);
    weight.expect_shape("conv1d weight", &[c_out, c_in, k])?;
    let out_len = conv1d_out_len(len, k, stride, padding).ok_or(NnError::Shape {
        op: "conv1d input shorter than kernel",
        expected: vec![batch, c_in, k.saturating_sub(2 * padding)],
        got: x.shape().to_vec(),
    })?;
    let xd = x.data();
    let wd = weight.data();
    let mut y = vec![T::zero(); batch * c_out * out_len];
    for b in 0..batch {
        for o in 0..c_out {
            let dst = &mut y[(b * c_out + o) * out_len..(b * c_out + o + 1) * out_len];
            if let Some(bias) = bias {
                dst.iter_mut().for_each(|v| *v = bias.data()[o]);
            }
            for c in 0..c_in {
                let src = &xd[(b * c_in + c) * len..(b * c_in + c + 1) * len];
                let ker = &wd[(o * c_in + c) * k..(o * c_in + c + 1) * k];
                for (t, out) in dst.iter_mut().enumerate() {
                    let start = (t * stride) as isize - padding as isize;
                    let mut acc = T::zero();
                    for (j, &kv) in ker.iter().enumerate() {
                        let i = start + j as isize;
                        if i >= 0 && (i as usize) < len {
                            acc += kv * src[i as usize];
                        }
                    }
                    *out += acc;
                }
            }
        }
    }
    Tensor::from_vec(&[batch, c_out, out_len], y)
}

pub fn conv1d_backward<T: Real>(
    x: &Tensor<T>,
    grad_out: &Tensor<T>,
    weight: &mut Tensor<T>,
    bias: Option<&mut Tensor<T>>,
    stride: usize,
    padding: usize,
) -> Result<Tensor<T>, NnError> {
    let (batch, c_in, len) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (c_out, k) = (weight.shape()[0], weight.shape()[2]);
    let out_len = conv1d_out_len(len, k, stride, padding).unwrap_or(0);
    grad_out.expect_shape("conv1d backward", &[batch, c_out, out_len])?;
    let xd = x.data();
    let g = grad_out.data();
    let mut dx = vec![T::zero(); xd.len()];
    let (wd, dw) = weight.parts_mut();
    for b in 0..batch {
        for o in 0..c_out {
            let go = &g[(b * c_out + o) * out_len..(b * c_out + o + 1) * out_len];
            for c in 0..c_in {
                let base = (b * c_in + c) * len;
                let wbase = (o * c_in + c) * k;
                for (t, &gv) in go.iter().enumerate() {
                    let start = (t * stride) as isize - padding as isize;
                    for j in 0..k {
                        let i = start + j as isize;
                        if i >= 0 && (i as usize) < len {
                            let i = i as usize;
                            dw[wbase + j] += gv * xd[base + i];
                            dx[base + i] += gv * wd[wbase + j];
                        }
                    }
                }
            }
        }
    }
    if let Some(bias) = bias {
        let db = bias.grad_mut();
        for b in 0..batch {
            for (o, d) in db.iter_mut().enumerate() {
                *d += g[(b * c_out + o) * out_len..(b * c_out + o + 1) * out_len]
                    .iter()
                    .copied()
                    .sum::<T>();
            }
        }
    }
    Tensor::from_vec(x.shape(), dx)
}

#[derive(Debug, Clone)]
pub struct Conv1d<T: Real> {
    pub weight: Tensor<T>,
    pub bias: Option<Tensor<T>>,
    pub stride: usize,
    pub padding: usize,
    cache: Option<Tensor<T>>,
}

impl<T: Real> Conv1d<T> {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng + ?Sized>(
        c_in: usize,
        c_out: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        bias: bool,
        rng: &mut R,
    ) -> Self {
        let fan_in = c_in * kernel;
        Self {
            weight: Tensor::param_uniform(&[c_out, c_in, kernel], fan_in, rng),
            bias: bias.then(|| Tensor::param_uniform(&[c_out], fan_in, rng)),
            stride,
            padding,
            cache: None,
        }
    }

    pub fn forward(&mut self, x: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        let y = conv1d_forward(x, &self.weight, self.bias.as_ref(), self.stride, self.padding)?;
        self.cache = Some(x.clone());
        Ok(y)
    }

    pub fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        let x = self.cache.take().ok_or(NnError::NoCache("conv1d"))?;
        conv1d_backward(&x, grad_out, &mut self.weight, self.bias.as_mut(), self.stride, self.padding)
    }

    pub fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        conv1d_forward(x, &self.weight, self.bias.as_ref(), self.stride, self.padding)
    }
}

impl<T: Real> Module<T> for Conv1d<T> {
    fn visit_params(&self, f: &mut dyn FnMut(&str, &Tensor<T>)) {
        f("weight", &self.weight);
        if let Some(b) = &self.bias {
            f("bias", b);
        }
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        f("weight", &mut self.weight);
        if let Some(b) = &mut self.bias {
            f("bias", b);
        }
    }
}
