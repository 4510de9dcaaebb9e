use rand::Rng;

use super::ops::{gemm_ab, gemm_abt, gemm_atb, sigmoid};
use super::{Module, NnError, Real, Tensor};

/// Hidden and cell state for a batch, each `[batch, hidden]` row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmState<T> {
    pub h: Vec<T>,
    pub c: Vec<T>,
}

impl<T: Real> LstmState<T> {
    pub fn zeros(batch: usize, hidden: usize) -> Self {
        Self {
            h: vec![T::zero(); batch * hidden],
            c: vec![T::zero(); batch * hidden],
        }
    }
}

/// Everything one cell step's backward needs.
#[derive(Debug, Clone)]
pub struct LstmStepCache<T> {
    pub x: Vec<T>,
    pub h_prev: Vec<T>,
    pub c_prev: Vec<T>,
    /// Activated gates `[batch, 4·hidden]` in i, f, g, o order.
    pub gates: Vec<T>,
    pub tanh_c: Vec<T>,
}

/// LSTM with gate order i, f, g, o: `W_ih: [4H, in]`, `W_hh: [4H, H]`, `b: [4H]`.
#[derive(Debug, Clone)]
pub struct Lstm<T: Real> {
    pub w_ih: Tensor<T>,
    pub w_hh: Tensor<T>,
    pub bias: Tensor<T>,
    caches: Vec<LstmStepCache<T>>,
    batch: usize,
}

/// One cell step: `c = f⊙c_prev + i⊙g`, `h = o⊙tanh(c)`.
pub fn lstm_cell_forward<T: Real>(
    lstm: &Lstm<T>,
    x: &[T],
    state: &LstmState<T>,
    batch: usize,
) -> Result<(LstmState<T>, LstmStepCache<T>), NnError> {
    let (hidden, input) = (lstm.hidden(), lstm.input());
    if x.len() != batch * input || state.h.len() != batch * hidden || state.c.len() != batch * hidden {
        return Err(NnError::Shape {
            op: "lstm_cell",
            expected: vec![batch, input, hidden],
            got: vec![x.len(), state.h.len(), state.c.len()],
        });
    }
    let g4 = 4 * hidden;
    let mut pre = vec![T::zero(); batch * g4];
    for row in pre.chunks_mut(g4) {
        row.copy_from_slice(lstm.bias.data());
    }
    gemm_abt(x, lstm.w_ih.data(), batch, input, g4, &mut pre);
    gemm_abt(&state.h, lstm.w_hh.data(), batch, hidden, g4, &mut pre);
    let mut h = vec![T::zero(); batch * hidden];
    let mut c = vec![T::zero(); batch * hidden];
    let mut tanh_c = vec![T::zero(); batch * hidden];
    for b in 0..batch {
        let gates = &mut pre[b * g4..(b + 1) * g4];
        for j in 0..hidden {
            gates[j] = sigmoid(gates[j]);
            gates[hidden + j] = sigmoid(gates[hidden + j]);
            gates[2 * hidden + j] = gates[2 * hidden + j].tanh();
            gates[3 * hidden + j] = sigmoid(gates[3 * hidden + j]);
            let k = b * hidden + j;
            c[k] = gates[hidden + j] * state.c[k] + gates[j] * gates[2 * hidden + j];
            tanh_c[k] = c[k].tanh();
            h[k] = gates[3 * hidden + j] * tanh_c[k];
        }
    }
    let cache = LstmStepCache {
        x: x.to_vec(),
        h_prev: state.h.clone(),
        c_prev: state.c.clone(),
        gates: pre,
        tanh_c,
    };
    Ok((LstmState { h, c }, cache))
}

/// Backward through one step. Accumulates parameter gradients and returns
/// `(dx, dh_prev, dc_prev)`.
pub fn lstm_cell_backward<T: Real>(
    lstm: &mut Lstm<T>,
    cache: &LstmStepCache<T>,
    dh: &[T],
    dc: &[T],
    batch: usize,
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let (hidden, input) = (lstm.hidden(), lstm.input());
    let g4 = 4 * hidden;
    let one = T::one();
    let mut dpre = vec![T::zero(); batch * g4];
    let mut dc_prev = vec![T::zero(); batch * hidden];
    for b in 0..batch {
        let gates = &cache.gates[b * g4..(b + 1) * g4];
        let dp = &mut dpre[b * g4..(b + 1) * g4];
        for j in 0..hidden {
            let k = b * hidden + j;
            let (i, f, g, o) = (gates[j], gates[hidden + j], gates[2 * hidden + j], gates[3 * hidden + j]);
            let tc = cache.tanh_c[k];
            let dct = dc[k] + dh[k] * o * (one - tc * tc);
            dp[j] = dct * g * i * (one - i);
            dp[hidden + j] = dct * cache.c_prev[k] * f * (one - f);
            dp[2 * hidden + j] = dct * i * (one - g * g);
            dp[3 * hidden + j] = dh[k] * tc * o * (one - o);
            dc_prev[k] = dct * f;
        }
    }
    {
        let (_, dw) = lstm.w_ih.parts_mut();
        gemm_atb(&dpre, &cache.x, batch, g4, input, dw);
    }
    {
        let (_, dw) = lstm.w_hh.parts_mut();
        gemm_atb(&dpre, &cache.h_prev, batch, g4, hidden, dw);
    }
    {
        let db = lstm.bias.grad_mut();
        for row in dpre.chunks(g4) {
            for (d, v) in db.iter_mut().zip(row) {
                *d += *v;
            }
        }
    }
    let mut dx = vec![T::zero(); batch * input];
    gemm_ab(&dpre, lstm.w_ih.data(), batch, g4, input, &mut dx);
    let mut dh_prev = vec![T::zero(); batch * hidden];
    gemm_ab(&dpre, lstm.w_hh.data(), batch, g4, hidden, &mut dh_prev);
    (dx, dh_prev, dc_prev)
}

impl<T: Real> Lstm<T> {
    pub fn new<R: Rng + ?Sized>(input: usize, hidden: usize, rng: &mut R) -> Self {
        Self {
            w_ih: Tensor::param_uniform(&[4 * hidden, input], hidden, rng),
            w_hh: Tensor::param_uniform(&[4 * hidden, hidden], hidden, rng),
            bias: Tensor::param_uniform(&[4 * hidden], hidden, rng),
            caches: Vec::new(),
            batch: 0,
        }
    }

    pub fn hidden(&self) -> usize {
        self.w_hh.shape()[1]
    }

    pub fn input(&self) -> usize {
        self.w_ih.shape()[1]
    }

    /// Run over `x: [batch, time, input]` from a zero state; returns `[batch, time, hidden]`.
    pub fn forward_seq(&mut self, x: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        x.expect_rank("lstm", 3)?;
        let (batch, time, input) = (x.shape()[0], x.shape()[1], x.shape()[2]);
        if input != self.input() {
            return Err(NnError::Shape {
                op: "lstm",
                expected: vec![batch, time, self.input()],
                got: x.shape().to_vec(),
            });
        }
        let hidden = self.hidden();
        self.caches.clear();
        self.batch = batch;
        let mut state = LstmState::zeros(batch, hidden);
        let mut out = vec![T::zero(); batch * time * hidden];
        let mut xt = vec![T::zero(); batch * input];
        for t in 0..time {
            for b in 0..batch {
                let src = (b * time + t) * input;
                xt[b * input..(b + 1) * input].copy_from_slice(&x.data()[src..src + input]);
            }
            let (next, cache) = lstm_cell_forward(self, &xt, &state, batch)?;
            for b in 0..batch {
                let dst = (b * time + t) * hidden;
                out[dst..dst + hidden].copy_from_slice(&next.h[b * hidden..(b + 1) * hidden]);
            }
            self.caches.push(cache);
            state = next;
        }
        Tensor::from_vec(&[batch, time, hidden], out)
    }

    /// Backpropagate through time; `grad_out` matches the last `forward_seq` output.
    pub fn backward_seq(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        if self.caches.is_empty() {
            return Err(NnError::NoCache("lstm"));
        }
        let (batch, time, hidden, input) = (self.batch, self.caches.len(), self.hidden(), self.input());
        grad_out.expect_shape("lstm backward", &[batch, time, hidden])?;
        let caches = std::mem::take(&mut self.caches);
        let mut dx = vec![T::zero(); batch * time * input];
        let mut dh_next = vec![T::zero(); batch * hidden];
        let mut dc_next = vec![T::zero(); batch * hidden];
        for t in (0..time).rev() {
            let mut dh = dh_next.clone();
            for b in 0..batch {
                let src = (b * time + t) * hidden;
                for j in 0..hidden {
                    dh[b * hidden + j] += grad_out.data()[src + j];
                }
            }
            let (dxt, dhp, dcp) = lstm_cell_backward(self, &caches[t], &dh, &dc_next, batch);
            for b in 0..batch {
                let dst = (b * time + t) * input;
                dx[dst..dst + input].copy_from_slice(&dxt[b * input..(b + 1) * input]);
            }
            dh_next = dhp;
            dc_next = dcp;
        }
        Tensor::from_vec(&[batch, time, input], dx)
    }

    /// Like [`Lstm::forward_seq`] but records nothing for backward.
    pub fn infer_seq(&self, x: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        x.expect_rank("lstm", 3)?;
        let (batch, time, input) = (x.shape()[0], x.shape()[1], x.shape()[2]);
        if input != self.input() {
            return Err(NnError::Shape {
                op: "lstm",
                expected: vec![batch, time, self.input()],
                got: x.shape().to_vec(),
            });
        }
        let hidden = self.hidden();
        let mut state = LstmState::zeros(batch, hidden);
        let mut out = vec![T::zero(); batch * time * hidden];
        let mut xt = vec![T::zero(); batch * input];
        for t in 0..time {
            for b in 0..batch {
                let src = (b * time + t) * input;
                xt[b * input..(b + 1) * input].copy_from_slice(&x.data()[src..src + input]);
            }
            state = self.step(&xt, &state, batch)?;
            for b in 0..batch {
                let dst = (b * time + t) * hidden;
                out[dst..dst + hidden].copy_from_slice(&state.h[b * hidden..(b + 1) * hidden]);
            }
        }
        Tensor::from_vec(&[batch, time, hidden], out)
    }

    /// Single inference step without recording a cache.
    pub fn step(&self, x: &[T], state: &LstmState<T>, batch: usize) -> Result<LstmState<T>, NnError> {
        lstm_cell_forward(self, x, state, batch).map(|(s, _)| s)
    }
}

impl<T: Real> Module<T> for Lstm<T> {
    fn visit_params(&self, f: &mut dyn FnMut(&str, &Tensor<T>)) {
        f("w_ih", &self.w_ih);
        f("w_hh", &self.w_hh);
        f("bias", &self.bias);
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        f("w_ih", &mut self.w_ih);
        f("w_hh", &mut self.w_hh);
        f("bias", &mut self.bias);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::{grad_check, LayerProbe};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn zeroed(input: usize, hidden: usize) -> Lstm<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut l = Lstm::new(input, hidden, &mut rng);
        l.visit_params_mut(&mut |_, p| p.data_mut().iter_mut().for_each(|v| *v = 0.0));
        l
    }

    #[test]
    fn zero_params_and_state_give_zero() {
        let l = zeroed(3, 4);
        let x = vec![0.0; 2 * 3];
        let (s, cache) = lstm_cell_forward(&l, &x, &LstmState::zeros(2, 4), 2).unwrap();
        assert!(s.h.iter().all(|&v| v == 0.0));
        assert!(s.c.iter().all(|&v| v == 0.0));
        for b in 0..2 {
            let g = &cache.gates[b * 16..(b + 1) * 16];
            assert!(g[..8].iter().all(|&v| v == 0.5));
            assert!(g[8..12].iter().all(|&v| v == 0.0));
            assert!(g[12..].iter().all(|&v| v == 0.5));
        }
    }

    #[test]
    fn forget_dominant_keeps_cell() {
        let hidden = 3;
        let mut l = zeroed(2, hidden);
        for j in 0..hidden {
            l.bias.data_mut()[j] = -10.0; // input gate closed
            l.bias.data_mut()[hidden + j] = 10.0; // forget gate open
        }
        let state = LstmState {
            h: vec![0.1, -0.2, 0.3],
            c: vec![0.7, -1.2, 2.0],
        };
        let (next, _) = lstm_cell_forward(&l, &[0.5, -0.5], &state, 1).unwrap();
        for (a, b) in next.c.iter().zip(&state.c) {
            assert!((a - b).abs() < 1e-3);
        }
    }

    #[test]
    fn shape_mismatch() {
        let l = zeroed(3, 4);
        assert!(lstm_cell_forward(&l, &[0.0; 2], &LstmState::zeros(1, 4), 1).is_err());
    }

    #[test]
    fn bptt_over_five_steps_matches_finite_differences() {
        for seed in 0..3 {
            let mut probe = LayerProbe::lstm(3, 4, 2, 5, seed);
            let err = grad_check(&mut probe, 1e-5, usize::MAX, seed);
            assert!(err < 1e-5, "seed {seed}: {err}");
        }
    }
}
