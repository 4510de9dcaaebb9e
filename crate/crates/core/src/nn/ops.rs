//! Dense kernels over row-major slices and the elementwise nonlinearities.

use super::Real;

/// `out[i, j] (+)= Σ_p a[i, p] · b[j, p]` with `a: m×k`, `b: n×k`.
pub fn gemm_abt<T: Real>(a: &[T], b: &[T], m: usize, k: usize, n: usize, out: &mut [T]) {
    for i in 0..m {
        let row = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let col = &b[j * k..(j + 1) * k];
            let mut acc = T::zero();
            for p in 0..k {
                acc += row[p] * col[p];
            }
            out[i * n + j] += acc;
        }
    }
}

/// `out[i, j] += Σ_p a[i, p] · b[p, j]` with `a: m×k`, `b: k×n`.
pub fn gemm_ab<T: Real>(a: &[T], b: &[T], m: usize, k: usize, n: usize, out: &mut [T]) {
    for i in 0..m {
        let dst = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let s = a[i * k + p];
            if s == T::zero() {
                continue;
            }
            let src = &b[p * n..(p + 1) * n];
            for j in 0..n {
                dst[j] += s * src[j];
            }
        }
    }
}

/// `out[p, j] += Σ_i a[i, p] · b[i, j]` with `a: m×k`, `b: m×n`.
pub fn gemm_atb<T: Real>(a: &[T], b: &[T], m: usize, k: usize, n: usize, out: &mut [T]) {
    for i in 0..m {
        let src = &b[i * n..(i + 1) * n];
        for p in 0..k {
            let s = a[i * k + p];
            if s == T::zero() {
                continue;
            }
            let dst = &mut out[p * n..(p + 1) * n];
            for j in 0..n {
                dst[j] += s * src[j];
            }
        }
    }
}

pub fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

pub fn relu_inplace<T: Real>(x: &mut [T]) {
    for v in x {
        if *v < T::zero() {
            *v = T::zero();
        }
    }
}

/// Zero the gradient wherever the (post-activation) output was clamped.
pub fn relu_backward_inplace<T: Real>(out: &[T], grad: &mut [T]) {
    for (g, y) in grad.iter_mut().zip(out) {
        if *y <= T::zero() {
            *g = T::zero();
        }
    }
}

/// `[B, C, T]` → `[B, T, C]`.
pub fn transpose_last2<T: Real>(x: &[T], b: usize, rows: usize, cols: usize) -> Vec<T> {
    let mut out = vec![T::zero(); x.len()];
    for bi in 0..b {
        let base = bi * rows * cols;
        for r in 0..rows {
            for c in 0..cols {
                out[base + c * rows + r] = x[base + r * cols + c];
            }
        }
    }
    out
}

pub fn global_norm<T: Real>(values: impl Iterator<Item = T>) -> f64 {
    values.map(|v| v.f64() * v.f64()).sum::<f64>().sqrt()
}
