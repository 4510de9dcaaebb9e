use rand::Rng;

use super::ModelError;
use crate::nn::{Module, Real, Tensor};

/// A `V × d` codebook with per-entry idle counters for dead-code reinitialisation.
#[derive(Debug, Clone)]
pub struct Codebook<T: Real> {
    pub entries: Tensor<T>,
    /// Total selections per entry.
    pub usage: Vec<u64>,
    /// Training steps since each entry was last selected.
    pub idle: Vec<u64>,
}

#[derive(Debug, Clone)]
pub struct VqOutput<T> {
    pub z_q: Vec<T>,
    pub indices: Vec<usize>,
    /// `mean_rows ‖sg(z) − e‖²`.
    pub vq_loss: f64,
    /// `β · mean_rows ‖z − sg(e)‖²`.
    pub commit_loss: f64,
}

impl<T: Real> Codebook<T> {
    pub fn new<R: Rng + ?Sized>(size: usize, dim: usize, rng: &mut R) -> Self {
        Self {
            entries: Tensor::param_uniform(&[size, dim], dim, rng),
            usage: vec![0; size],
            idle: vec![0; size],
        }
    }

    pub fn from_entries(entries: Tensor<T>) -> Self {
        let n = entries.shape()[0];
        Self {
            entries: entries.with_grad(),
            usage: vec![0; n],
            idle: vec![0; n],
        }
    }

    pub fn size(&self) -> usize {
        self.entries.shape()[0]
    }

    pub fn dim(&self) -> usize {
        self.entries.shape().get(1).copied().unwrap_or(0)
    }

    pub fn row(&self, i: usize) -> &[T] {
        let d = self.dim();
        &self.entries.data()[i * d..(i + 1) * d]
    }

    /// Record one training step's selections.
    pub fn record_usage(&mut self, indices: &[usize]) {
        self.idle.iter_mut().for_each(|c| *c += 1);
        for &i in indices {
            self.usage[i] += 1;
            self.idle[i] = 0;
        }
    }

    /// Move every entry idle for at least `max_idle` steps onto a random row of `z`.
    /// Returns the number of entries reset.
    pub fn reinit_dead<R: Rng + ?Sized>(&mut self, z: &[T], max_idle: u64, rng: &mut R) -> usize {
        let d = self.dim();
        let rows = z.len() / d.max(1);
        if rows == 0 {
            return 0;
        }
        let mut reset = 0;
        for i in 0..self.size() {
            if self.idle[i] >= max_idle {
                let r = rng.random_range(0..rows);
                self.entries.data_mut()[i * d..(i + 1) * d].copy_from_slice(&z[r * d..(r + 1) * d]);
                self.idle[i] = 0;
                reset += 1;
            }
        }
        reset
    }
}

impl<T: Real> Module<T> for Codebook<T> {
    fn visit_params(&self, f: &mut dyn FnMut(&str, &Tensor<T>)) {
        f("entries", &self.entries);
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        f("entries", &mut self.entries);
    }
}

fn sq_dist<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(&x, &y)| (x - y) * (x - y)).sum()
}

/// Nearest-entry quantisation of the rows of `z: [rows, d]`. Ties go to the lowest index.
pub fn vq_quantize<T: Real>(codebook: &Codebook<T>, z: &[T], beta: f64) -> Result<VqOutput<T>, ModelError> {
    let (v, d) = (codebook.size(), codebook.dim());
    if v == 0 || d == 0 {
        return Err(ModelError::EmptyCodebook);
    }
    if z.len() % d != 0 {
        return Err(ModelError::Dim { expected: d, got: z.len() });
    }
    let rows = z.len() / d;
    let mut z_q = Vec::with_capacity(z.len());
    let mut indices = Vec::with_capacity(rows);
    let mut total = 0.0;
    for row in z.chunks(d) {
        let mut best = (0, sq_dist(row, codebook.row(0)));
        for i in 1..v {
            let dist = sq_dist(row, codebook.row(i));
            if dist < best.1 {
                best = (i, dist);
            }
        }
        indices.push(best.0);
        z_q.extend_from_slice(codebook.row(best.0));
        total += best.1.f64();
    }
    let mean = if rows == 0 { 0.0 } else { total / rows as f64 };
    Ok(VqOutput {
        z_q,
        indices,
        vq_loss: mean,
        commit_loss: beta * mean,
    })
}

/// Backward through the bottleneck. `grad_zq` passes straight through to `z`; the
/// codebook receives the vq-loss gradient and `z` the commitment gradient.
pub fn vq_backward<T: Real>(
    codebook: &mut Codebook<T>,
    z: &[T],
    out: &VqOutput<T>,
    grad_zq: &[T],
    beta: f64,
) -> Vec<T> {
    let d = codebook.dim();
    let rows = out.indices.len();
    if rows == 0 {
        return Vec::new();
    }
    let scale = T::of(2.0 / rows as f64);
    let commit = T::of(2.0 * beta / rows as f64);
    let mut grad_z = grad_zq.to_vec();
    let dtable = codebook.entries.grad_mut();
    for (r, &i) in out.indices.iter().enumerate() {
        for j in 0..d {
            let diff = z[r * d + j] - out.z_q[r * d + j];
            dtable[i * d + j] -= scale * diff;
            grad_z[r * d + j] += commit * diff;
        }
    }
    grad_z
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn two_entry() -> Codebook<f64> {
        Codebook::from_entries(Tensor::from_vec(&[2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap())
    }

    #[test]
    fn nearest_entry() {
        let out = vq_quantize(&two_entry(), &[0.9, 0.2], 1.0).unwrap();
        assert_eq!(out.indices, vec![0]);
        assert_eq!(out.z_q, vec![1.0, 0.0]);
    }

    #[test]
    fn ties_take_lowest_index() {
        let out = vq_quantize(&two_entry(), &[0.5, 0.5], 0.25).unwrap();
        assert_eq!(out.indices, vec![0]);
    }

    #[test]
    fn commitment_arithmetic() {
        let out = vq_quantize(&two_entry(), &[0.9, 0.2], 1.0).unwrap();
        assert!((out.commit_loss - 0.05).abs() < 1e-12);
        assert!((out.vq_loss - 0.05).abs() < 1e-12);
    }

    #[test]
    fn empty_codebook_rejected() {
        let cb = Codebook::<f64>::from_entries(Tensor::zeros(&[0, 2]));
        assert!(matches!(vq_quantize(&cb, &[1.0, 2.0], 0.25), Err(ModelError::EmptyCodebook)));
    }

    #[test]
    fn outputs_are_codebook_rows() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let cb = Codebook::<f32>::new(16, 4, &mut rng);
        let z: Vec<f32> = (0..40).map(|_| rng.random_range(-1.0..1.0)).collect();
        let out = vq_quantize(&cb, &z, 0.25).unwrap();
        for (r, &i) in out.indices.iter().enumerate() {
            let row = &out.z_q[r * 4..(r + 1) * 4];
            assert!(row.iter().zip(cb.row(i)).all(|(a, b)| a.to_bits() == b.to_bits()));
        }
    }

    #[test]
    fn straight_through_and_loss_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut cb = Codebook::<f64>::new(5, 3, &mut rng);
        let z: Vec<f64> = (0..12).map(|_| rng.random_range(-1.0..1.0)).collect();
        let beta = 0.25;
        let out = vq_quantize(&cb, &z, beta).unwrap();
        let upstream: Vec<f64> = (0..12).map(|i| 0.1 * i as f64 - 0.5).collect();
        let gz = vq_backward(&mut cb, &z, &out, &upstream, beta);

        // with zero upstream the gradient wrt z is the commitment term alone
        let mut cb2 = cb.clone();
        let gz0 = vq_backward(&mut cb2, &z, &out, &[0.0; 12], beta);
        for i in 0..12 {
            assert!((gz[i] - gz0[i] - upstream[i]).abs() < 1e-15);
        }

        // commitment gradient vs central differences (assignment held fixed)
        let eps = 1e-6;
        for i in 0..12 {
            let mut zp = z.clone();
            zp[i] += eps;
            let mut zm = z.clone();
            zm[i] -= eps;
            let lp = vq_quantize(&cb, &zp, beta).unwrap().commit_loss;
            let lm = vq_quantize(&cb, &zm, beta).unwrap().commit_loss;
            assert!(((lp - lm) / (2.0 * eps) - gz0[i]).abs() < 1e-7);
        }
    }

    #[test]
    fn dead_codes_move_to_data() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut cb = Codebook::<f64>::new(3, 2, &mut rng);
        for _ in 0..200 {
            cb.record_usage(&[0]);
        }
        let z = vec![7.0, 7.0];
        assert_eq!(cb.reinit_dead(&z, 200, &mut rng), 2);
        assert_eq!(cb.row(1), &[7.0, 7.0]);
        assert_eq!(cb.row(2), &[7.0, 7.0]);
        assert_ne!(cb.row(0), &[7.0, 7.0]);
    }
}
