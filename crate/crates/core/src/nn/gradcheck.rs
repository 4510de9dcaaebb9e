//! Central-difference gradient checking.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{
    softmax_xent, Conv1d, Embedding, LayerNorm, Linear, Lstm, Module, Real, Tensor,
};

/// A scalar objective over a flat coordinate vector (parameters and inputs).
pub trait GradProbe {
    fn num_coords(&self) -> usize;
    fn coord(&mut self, i: usize) -> f64;
    fn set_coord(&mut self, i: usize, v: f64);
    fn loss(&mut self) -> f64;
    /// Analytic gradient of `loss` at every coordinate.
    fn gradient(&mut self) -> Vec<f64>;
}

/// Relative error `|a − n| / max(|a|, |n|, floor)`; the floor keeps near-zero
/// gradients from turning finite-difference round-off into huge ratios.
pub const REL_ERROR_FLOOR: f64 = 1e-3;

/// Maximum relative error between the analytic gradient and central differences.
/// Checks every coordinate, or a seeded random subset of `max(max_coords, 200)` when larger.
pub fn grad_check<P: GradProbe>(probe: &mut P, eps: f64, max_coords: usize, seed: u64) -> f64 {
    let analytic = probe.gradient();
    let n = probe.num_coords();
    let coords: Vec<usize> = if n <= max_coords {
        (0..n).collect()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut idx = sample(&mut rng, n, max_coords.max(200).min(n)).into_vec();
        idx.sort_unstable();
        idx
    };
    let mut worst = 0.0f64;
    for i in coords {
        let orig = probe.coord(i);
        probe.set_coord(i, orig + eps);
        let plus = probe.loss();
        probe.set_coord(i, orig - eps);
        let minus = probe.loss();
        probe.set_coord(i, orig);
        let numeric = (plus - minus) / (2.0 * eps);
        let a = analytic[i];
        let denom = a.abs().max(numeric.abs()).max(REL_ERROR_FLOOR);
        worst = worst.max((a - numeric).abs() / denom);
    }
    worst
}

enum Layer {
    Linear(Linear<f64>),
    Conv(Conv1d<f64>),
    Lstm(Lstm<f64>),
    Embedding(Embedding<f64>, Vec<usize>),
    Norm(LayerNorm<f64>),
    Xent(Vec<usize>),
}

/// A single layer evaluated on a fixed random input, with loss `Σ w ⊙ output`
/// for a fixed random projection `w`.
pub struct LayerProbe {
    layer: Layer,
    input: Tensor<f64>,
    projection: Vec<f64>,
    differentiable_input: bool,
}

fn random_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

impl LayerProbe {
    fn build(layer: Layer, input: Tensor<f64>, differentiable_input: bool, rng: &mut ChaCha8Rng) -> Self {
        let mut probe = Self {
            layer,
            input,
            projection: Vec::new(),
            differentiable_input,
        };
        let out = probe.forward();
        probe.projection = (0..out.numel()).map(|_| rng.random_range(-1.0..1.0)).collect();
        probe
    }

    pub fn linear(fan_in: usize, fan_out: usize, batch: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layer = Linear::new(fan_in, fan_out, true, &mut rng);
        let x = random_tensor(&[batch, fan_in], &mut rng);
        Self::build(Layer::Linear(layer), x, true, &mut rng)
    }

    pub fn conv1d(
        c_in: usize,
        c_out: usize,
        len: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        seed: u64,
    ) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layer = Conv1d::new(c_in, c_out, kernel, stride, padding, true, &mut rng);
        let x = random_tensor(&[2, c_in, len], &mut rng);
        Self::build(Layer::Conv(layer), x, true, &mut rng)
    }

    pub fn lstm(input: usize, hidden: usize, batch: usize, steps: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layer = Lstm::new(input, hidden, &mut rng);
        let x = random_tensor(&[batch, steps, input], &mut rng);
        Self::build(Layer::Lstm(layer), x, true, &mut rng)
    }

    pub fn embedding(rows: usize, dim: usize, indices: &[usize], seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layer = Embedding::new(rows, dim, &mut rng);
        Self::build(
            Layer::Embedding(layer, indices.to_vec()),
            Tensor::zeros(&[0]),
            false,
            &mut rng,
        )
    }

    pub fn layer_norm(channels: usize, rows: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layer = LayerNorm::new(channels);
        // move away from the identity initialisation
        for v in layer.gain.data_mut().iter_mut().chain(layer.bias.data_mut()) {
            *v += rng.random_range(-0.5..0.5);
        }
        let x = random_tensor(&[rows, channels], &mut rng);
        Self::build(Layer::Norm(layer), x, true, &mut rng)
    }

    pub fn softmax_xent(batch: usize, classes: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let targets = (0..batch).map(|_| rng.random_range(0..classes)).collect();
        let x = random_tensor(&[batch, classes], &mut rng).data().iter().map(|v| 3.0 * v).collect();
        let x = Tensor::from_vec(&[batch, classes], x).unwrap();
        Self::build(Layer::Xent(targets), x, true, &mut rng)
    }

    fn forward(&mut self) -> Tensor<f64> {
        let x = &self.input;
        match &mut self.layer {
            Layer::Linear(l) => l.forward(x).unwrap(),
            Layer::Conv(l) => l.forward(x).unwrap(),
            Layer::Lstm(l) => l.forward_seq(x).unwrap(),
            Layer::Embedding(l, idx) => l.forward(idx).unwrap(),
            Layer::Norm(l) => l.forward(x).unwrap(),
            Layer::Xent(t) => {
                let (loss, _) = softmax_xent(x, t).unwrap();
                Tensor::from_vec(&[1], vec![loss]).unwrap()
            }
        }
    }

    fn backward(&mut self, g: &Tensor<f64>) -> Vec<f64> {
        match &mut self.layer {
            Layer::Linear(l) => l.backward(g).unwrap().into_data(),
            Layer::Conv(l) => l.backward(g).unwrap().into_data(),
            Layer::Lstm(l) => l.backward_seq(g).unwrap().into_data(),
            Layer::Embedding(l, idx) => {
                l.backward(idx, g).unwrap();
                Vec::new()
            }
            Layer::Norm(l) => l.backward(g).unwrap().into_data(),
            Layer::Xent(t) => {
                let (_, grad) = softmax_xent(&self.input, t).unwrap();
                grad.data().iter().map(|v| v * g.data()[0]).collect()
            }
        }
    }

    fn module(&mut self) -> Option<&mut dyn Module<f64>> {
        match &mut self.layer {
            Layer::Linear(l) => Some(l),
            Layer::Conv(l) => Some(l),
            Layer::Lstm(l) => Some(l),
            Layer::Embedding(l, _) => Some(l),
            Layer::Norm(l) => Some(l),
            Layer::Xent(_) => None,
        }
    }

    fn param_count(&mut self) -> usize {
        self.module().map_or(0, |m| m.num_params())
    }

    fn with_param<R>(&mut self, i: usize, f: impl FnOnce(&mut f64) -> R) -> R {
        let mut f = Some(f);
        let mut out = None;
        let mut offset = 0;
        if let Some(m) = self.module() {
            m.visit_params_mut(&mut |_, p| {
                let n = p.numel();
                if out.is_none() && i < offset + n {
                    out = Some((f.take().unwrap())(&mut p.data_mut()[i - offset]));
                }
                offset += n;
            });
        }
        out.expect("coordinate in range")
    }
}

impl GradProbe for LayerProbe {
    fn num_coords(&self) -> usize {
        let params = match &self.layer {
            Layer::Linear(l) => l.num_params(),
            Layer::Conv(l) => l.num_params(),
            Layer::Lstm(l) => l.num_params(),
            Layer::Embedding(l, _) => l.num_params(),
            Layer::Norm(l) => l.num_params(),
            Layer::Xent(_) => 0,
        };
        params + if self.differentiable_input { self.input.numel() } else { 0 }
    }

    fn coord(&mut self, i: usize) -> f64 {
        let np = self.param_count();
        if i < np {
            self.with_param(i, |v| *v)
        } else {
            self.input.data()[i - np]
        }
    }

    fn set_coord(&mut self, i: usize, v: f64) {
        let np = self.param_count();
        if i < np {
            self.with_param(i, |p| *p = v);
        } else {
            self.input.data_mut()[i - np] = v;
        }
    }

    fn loss(&mut self) -> f64 {
        let out = self.forward();
        out.data().iter().zip(&self.projection).map(|(a, b)| a * b).sum()
    }

    fn gradient(&mut self) -> Vec<f64> {
        if let Some(m) = self.module() {
            m.zero_grad();
        }
        let out = self.forward();
        let g = Tensor::from_vec(out.shape(), self.projection.clone()).unwrap();
        let dx = self.backward(&g);
        let mut grads = Vec::new();
        if let Some(m) = self.module() {
            m.visit_params(&mut |_, p| {
                let n = p.numel();
                grads.extend(p.grad().map(|g| g.to_vec()).unwrap_or_else(|| vec![0.0; n]));
            });
        }
        if self.differentiable_input {
            grads.extend(dx);
        }
        grads
    }
}

/// Lift any real-valued layer parameter view to f64 for checking.
pub fn to_f64_params<T: Real, M: Module<T>>(m: &M) -> Vec<f64> {
    let mut out = Vec::new();
    m.visit_params(&mut |_, p| out.extend(p.to_f64_vec()));
    out
}
