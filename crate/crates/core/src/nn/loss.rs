use super::{NnError, Real, Tensor};

/// Mean softmax cross-entropy over the batch and its gradient with respect to the logits.
pub fn softmax_xent<T: Real>(logits: &Tensor<T>, targets: &[usize]) -> Result<(T, Tensor<T>), NnError> {
    logits.expect_rank("softmax_xent", 2)?;
    let (batch, n) = (logits.shape()[0], logits.shape()[1]);
    if n < 2 || targets.len() != batch {
        return Err(NnError::Shape {
            op: "softmax_xent",
            expected: vec![targets.len(), n.max(2)],
            got: logits.shape().to_vec(),
        });
    }
    let scale = T::one() / T::of(batch.max(1) as f64);
    let mut loss = T::zero();
    let mut grad = vec![T::zero(); batch * n];
    for (b, (row, g)) in logits.data().chunks(n).zip(grad.chunks_mut(n)).enumerate() {
        let target = targets[b];
        if target >= n {
            return Err(NnError::IndexOutOfRange { index: target, size: n });
        }
        let (argmax, max) = row
            .iter()
            .copied()
            .enumerate()
            .fold((0, T::neg_infinity()), |acc, (i, v)| if v > acc.1 { (i, v) } else { acc });
        // log-sum-exp as max + ln(1 + Σ_{others} e^{x - max}), accurate when one logit dominates
        let mut rest = T::zero();
        for (i, &v) in row.iter().enumerate() {
            let e = (v - max).exp();
            g[i] = e;
            if i != argmax {
                rest += e;
            }
        }
        let lse = max + rest.ln_1p();
        loss += (lse - row[target]) * scale;
        let denom = T::one() + rest;
        for v in g.iter_mut() {
            *v = *v / denom * scale;
        }
        g[target] -= scale;
    }
    Ok((loss, Tensor::from_vec(&[batch, n], grad)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::{grad_check, LayerProbe};

    #[test]
    fn uniform_logits_give_ln_n() {
        for n in [2usize, 7, 256] {
            let logits = Tensor::<f64>::zeros(&[3, n]);
            let (loss, _) = softmax_xent(&logits, &[0, 1, n - 1]).unwrap();
            assert!((loss - (n as f64).ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn dominant_correct_logit_gives_vanishing_loss() {
        let logits = Tensor::<f64>::from_f64(&[1, 2], &[50.0, 0.0]).unwrap();
        let (loss, _) = softmax_xent(&logits, &[0]).unwrap();
        assert!(loss >= 0.0 && loss < 1e-20, "{loss}");
    }

    #[test]
    fn gradient_is_softmax_minus_one_hot() {
        let logits = Tensor::<f64>::from_f64(&[1, 3], &[1.0, 2.0, 3.0]).unwrap();
        let (_, g) = softmax_xent(&logits, &[1]).unwrap();
        let z: f64 = [1f64, 2., 3.].iter().map(|v| v.exp()).sum();
        let expected = [1f64.exp() / z, 2f64.exp() / z - 1.0, 3f64.exp() / z];
        for (a, b) in g.data().iter().zip(expected) {
            assert!((a - b).abs() < 1e-12);
        }
        let mut probe = LayerProbe::softmax_xent(4, 5, 2);
        assert!(grad_check(&mut probe, 1e-5, usize::MAX, 2) < 1e-6);
    }

    #[test]
    fn rejects_single_class() {
        let logits = Tensor::<f64>::zeros(&[1, 1]);
        assert!(softmax_xent(&logits, &[0]).is_err());
    }
}
