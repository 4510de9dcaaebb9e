use rand::Rng;

use super::ops::{gemm_ab, gemm_abt, gemm_atb};
use super::{Module, NnError, Real, Tensor};

/// `y = x·Wᵀ + b` for `x: [batch, in]`, `W: [out, in]`.
pub fn linear_forward<T: Real>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
) -> Result<Tensor<T>, NnError> {
    x.expect_rank("linear", 2)?;
    let (batch, fan_in) = (x.shape()[0], x.shape()[1]);
    let out_dim = weight.shape()[0];
    weight.expect_shape("linear weight", &[out_dim, fan_in])?;
    let mut y = vec![T::zero(); batch * out_dim];
    if let Some(b) = bias {
        b.expect_shape("linear bias", &[out_dim])?;
        for row in y.chunks_mut(out_dim) {
            row.copy_from_slice(b.data());
        }
    }
    gemm_abt(x.data(), weight.data(), batch, fan_in, out_dim, &mut y);
    Tensor::from_vec(&[batch, out_dim], y)
}

/// Accumulate `dW += gᵀx`, `db += Σ g` and return `dx = g·W`.
pub fn linear_backward<T: Real>(
    x: &Tensor<T>,
    grad_out: &Tensor<T>,
    weight: &mut Tensor<T>,
    bias: Option<&mut Tensor<T>>,
) -> Result<Tensor<T>, NnError> {
    let (batch, fan_in) = (x.shape()[0], x.shape()[1]);
    let out_dim = weight.shape()[0];
    grad_out.expect_shape("linear backward", &[batch, out_dim])?;
    let g = grad_out.data();
    let (w, dw) = weight.parts_mut();
    gemm_atb(g, x.data(), batch, out_dim, fan_in, dw);
    let mut dx = vec![T::zero(); batch * fan_in];
    gemm_ab(g, w, batch, out_dim, fan_in, &mut dx);
    if let Some(b) = bias {
        let db = b.grad_mut();
        for row in g.chunks(out_dim) {
            for (d, v) in db.iter_mut().zip(row) {
                *d += *v;
            }
        }
    }
    Tensor::from_vec(&[batch, fan_in], dx)
}

#[derive(Debug, Clone)]
pub struct Linear<T: Real> {
    pub weight: Tensor<T>,
    pub bias: Option<Tensor<T>>,
    cache: Option<Tensor<T>>,
}

impl<T: Real> Linear<T> {
    pub fn new<R: Rng + ?Sized>(fan_in: usize, fan_out: usize, bias: bool, rng: &mut R) -> Self {
        let weight = Tensor::param_uniform(&[fan_out, fan_in], fan_in, rng);
        let bias = bias.then(|| Tensor::param_uniform(&[fan_out], fan_in, rng));
        Self {
            weight,
            bias,
            cache: None,
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn out_dim(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn forward(&mut self, x: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        let y = linear_forward(x, &self.weight, self.bias.as_ref())?;
        self.cache = Some(x.clone());
        Ok(y)
    }

    pub fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        let x = self.cache.take().ok_or(NnError::NoCache("linear"))?;
        linear_backward(&x, grad_out, &mut self.weight, self.bias.as_mut())
    }

    /// Forward without recording anything for backward.
    pub fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        linear_forward(x, &self.weight, self.bias.as_ref())
    }
}

impl<T: Real> Module<T> for Linear<T> {
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

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::{grad_check, LayerProbe};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_weight_passes_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut l = Linear::<f64>::new(3, 3, true, &mut rng);
        l.weight = Tensor::from_f64(&[3, 3], &[1., 0., 0., 0., 1., 0., 0., 0., 1.]).unwrap().with_grad();
        l.bias = Some(Tensor::zeros(&[3]).with_grad());
        let x = Tensor::from_f64(&[2, 3], &[1., 2., 3., -4., 5., -6.]).unwrap();
        assert_eq!(l.forward(&x).unwrap().data(), x.data());
    }

    #[test]
    fn empty_batch() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut l = Linear::<f64>::new(4, 2, true, &mut rng);
        let x = Tensor::zeros(&[0, 4]);
        let y = l.forward(&x).unwrap();
        assert_eq!(y.shape(), &[0, 2]);
        let dx = l.backward(&y).unwrap();
        assert_eq!(dx.shape(), &[0, 4]);
        assert!(l.weight.grad().unwrap().iter().all(|&g| g == 0.0));
        assert!(l.bias.as_ref().unwrap().grad().unwrap().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn shape_mismatch() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut l = Linear::<f64>::new(4, 2, false, &mut rng);
        assert!(l.forward(&Tensor::zeros(&[2, 3])).is_err());
        assert_eq!(l.backward(&Tensor::zeros(&[2, 2])), Err(NnError::NoCache("linear")));
    }

    #[test]
    fn gradient_matches_finite_differences() {
        for seed in 0..3 {
            let mut probe = LayerProbe::linear(3 + seed as usize, 4, 5, seed);
            let err = grad_check(&mut probe, 1e-5, usize::MAX, seed);
            assert!(err < 1e-6, "seed {seed}: {err}");
        }
    }
}
