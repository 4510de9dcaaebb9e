use serde::{Deserialize, Serialize};

use super::{Module, NnError, Real, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamHyper {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment buffers plus the step counter for one parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub m: Vec<T>,
    pub v: Vec<T>,
    pub step: u64,
}

impl<T: Real> AdamState<T> {
    pub fn new(len: usize) -> Self {
        Self {
            m: vec![T::zero(); len],
            v: vec![T::zero(); len],
            step: 0,
        }
    }
}

/// Bias-corrected Adam update of `params` in place.
pub fn adam_step<T: Real>(
    params: &mut [T],
    grads: &[T],
    state: &mut AdamState<T>,
    lr: f64,
    hyper: &AdamHyper,
) -> Result<(), NnError> {
    if grads.iter().any(|g| !g.is_finite()) {
        return Err(NnError::NonFiniteGrad { name: String::new() });
    }
    state.step += 1;
    let (b1, b2) = (T::of(hyper.beta1), T::of(hyper.beta2));
    let c1 = T::of(1.0 - hyper.beta1.powi(state.step as i32));
    let c2 = T::of(1.0 - hyper.beta2.powi(state.step as i32));
    let (lr, eps, one) = (T::of(lr), T::of(hyper.eps), T::one());
    for (((p, &g), m), v) in params.iter_mut().zip(grads).zip(&mut state.m).zip(&mut state.v) {
        *m = b1 * *m + (one - b1) * g;
        *v = b2 * *v + (one - b2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *p -= lr * m_hat / (v_hat.sqrt() + eps);
    }
    Ok(())
}

/// Adam over every parameter of a module, in visiting order.
#[derive(Debug, Clone)]
pub struct Adam<T> {
    pub hyper: AdamHyper,
    pub states: Vec<AdamState<T>>,
}

impl<T: Real> Adam<T> {
    pub fn new(hyper: AdamHyper) -> Self {
        Self {
            hyper,
            states: Vec::new(),
        }
    }

    /// Apply one update. Non-finite gradients are rejected before any parameter changes.
    pub fn step<M: Module<T> + ?Sized>(&mut self, model: &mut M, lr: f64) -> Result<(), NnError> {
        let mut bad = None;
        model.visit_params(&mut |name, p| {
            if bad.is_none() && p.grad().is_some_and(|g| g.iter().any(|v| !v.is_finite())) {
                bad = Some(name.to_string());
            }
        });
        if let Some(name) = bad {
            return Err(NnError::NonFiniteGrad { name });
        }
        let hyper = self.hyper;
        let states = &mut self.states;
        let mut idx = 0;
        let mut result = Ok(());
        model.visit_params_mut(&mut |_, p: &mut Tensor<T>| {
            if states.len() <= idx {
                states.push(AdamState::new(p.numel()));
            }
            let n = p.numel();
            let grads = p.grad().map(|g| g.to_vec()).unwrap_or_else(|| vec![T::zero(); n]);
            if result.is_ok() {
                result = adam_step(p.data_mut(), &grads, &mut states[idx], lr, &hyper);
            }
            idx += 1;
        });
        result
    }
}

/// Scale all gradients so their global L2 norm is at most `max_norm`; returns the norm before clipping.
pub fn clip_grad_norm<T: Real, M: Module<T> + ?Sized>(model: &mut M, max_norm: f64) -> f64 {
    let mut sq = 0.0;
    model.visit_params(&mut |_, p| {
        if let Some(g) = p.grad() {
            sq += g.iter().map(|v| v.f64() * v.f64()).sum::<f64>();
        }
    });
    let norm = sq.sqrt();
    if norm > max_norm && norm.is_finite() {
        let scale = T::of(max_norm / norm);
        model.visit_params_mut(&mut |_, p| {
            if p.grad().is_some() {
                p.grad_mut().iter_mut().for_each(|g| *g *= scale);
            }
        });
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Linear;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = vec![1.0, -2.0, 3.0];
        let mut s = AdamState::new(3);
        adam_step(&mut p, &[0.0; 3], &mut s, 1e-2, &AdamHyper::default()).unwrap();
        assert_eq!(p, vec![1.0, -2.0, 3.0]);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = vec![0.0f64, 0.0];
        let mut s = AdamState::new(2);
        let g = [0.3, -2.0];
        let lr = 1e-3;
        adam_step(&mut p, &g, &mut s, lr, &AdamHyper::default()).unwrap();
        for (pi, gi) in p.iter().zip(g) {
            let expected = -lr * gi / (gi.abs() + 1e-8);
            assert!((pi - expected).abs() < 1e-15);
        }
    }

    #[test]
    fn non_finite_gradient_is_rejected_without_update() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut l = Linear::<f64>::new(2, 2, true, &mut rng);
        let before = l.weight.clone();
        l.bias.as_mut().unwrap().grad_mut()[0] = f64::NAN;
        l.weight.grad_mut()[0] = 1.0;
        let mut opt = Adam::new(AdamHyper::default());
        let err = opt.step(&mut l, 1e-2).unwrap_err();
        assert_eq!(err, NnError::NonFiniteGrad { name: "bias".into() });
        assert_eq!(l.weight.data(), before.data());
    }

    #[test]
    fn deterministic_updates() {
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(42);
            let mut l = Linear::<f32>::new(3, 2, true, &mut rng);
            let mut opt = Adam::new(AdamHyper::default());
            for step in 0..5 {
                l.zero_grad();
                l.weight.grad_mut().iter_mut().enumerate().for_each(|(i, g)| *g = (i + step) as f32 * 0.1);
                opt.step(&mut l, 1e-2).unwrap();
            }
            l.weight.data().to_vec()
        };
        let (a, b) = (run(), run());
        assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn clipping_scales_to_max_norm() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut l = Linear::<f64>::new(2, 1, false, &mut rng);
        l.weight.grad_mut().copy_from_slice(&[3.0, 4.0]);
        assert_eq!(clip_grad_norm(&mut l, 1.0), 5.0);
        assert!((l.weight.grad().unwrap()[0] - 0.6).abs() < 1e-15);
        assert!((l.weight.grad().unwrap()[1] - 0.8).abs() < 1e-15);
    }
}
