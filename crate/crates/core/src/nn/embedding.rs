use rand::Rng;

use super::{Module, NnError, Real, Tensor};

/// Gather rows of `table: [V, d]`; returns `[indices.len(), d]`.
pub fn embedding_forward<T: Real>(indices: &[usize], table: &Tensor<T>) -> Result<Tensor<T>, NnError> {
    let (rows, dim) = (table.shape()[0], table.shape()[1]);
    let mut out = Vec::with_capacity(indices.len() * dim);
    for &i in indices {
        if i >= rows {
            return Err(NnError::IndexOutOfRange { index: i, size: rows });
        }
        out.extend_from_slice(&table.data()[i * dim..(i + 1) * dim]);
    }
    Tensor::from_vec(&[indices.len(), dim], out)
}

/// Scatter-add `grad_out` rows into the table's gradient.
pub fn embedding_backward<T: Real>(
    indices: &[usize],
    grad_out: &Tensor<T>,
    table: &mut Tensor<T>,
) -> Result<(), NnError> {
    let dim = table.shape()[1];
    grad_out.expect_shape("embedding backward", &[indices.len(), dim])?;
    let g = grad_out.data();
    let dt = table.grad_mut();
    for (r, &i) in indices.iter().enumerate() {
        for (d, v) in dt[i * dim..(i + 1) * dim].iter_mut().zip(&g[r * dim..(r + 1) * dim]) {
            *d += *v;
        }
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct Embedding<T: Real> {
    pub table: Tensor<T>,
}

impl<T: Real> Embedding<T> {
    pub fn new<R: Rng + ?Sized>(rows: usize, dim: usize, rng: &mut R) -> Self {
        Self {
            table: Tensor::param_uniform(&[rows, dim], dim, rng),
        }
    }

    pub fn rows(&self) -> usize {
        self.table.shape()[0]
    }

    pub fn dim(&self) -> usize {
        self.table.shape()[1]
    }

    pub fn forward(&self, indices: &[usize]) -> Result<Tensor<T>, NnError> {
        embedding_forward(indices, &self.table)
    }

    pub fn backward(&mut self, indices: &[usize], grad_out: &Tensor<T>) -> Result<(), NnError> {
        embedding_backward(indices, grad_out, &mut self.table)
    }
}

impl<T: Real> Module<T> for Embedding<T> {
    fn visit_params(&self, f: &mut dyn FnMut(&str, &Tensor<T>)) {
        f("table", &self.table);
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        f("table", &mut self.table);
    }
}
