use rand::Rng;

use super::ModelError;
use crate::nn::{linear_backward, linear_forward, softmax_xent, Linear, Real, Tensor};

/// InfoNCE loss, per-horizon accuracy and gradients wrt the context and target rows.
#[derive(Debug, Clone)]
pub struct InfoNce<T> {
    pub loss: f64,
    /// Fraction of rows where the positive outscores every negative, for k = 1..=K.
    pub accuracy: Vec<f64>,
    pub grad_context: Vec<T>,
    pub grad_targets: Vec<T>,
}

fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

/// Contrastive predictive coding loss over `context: [batch, time, c]` and
/// `targets: [batch, time, d]`. Predictor `k` (1-based) maps `context_t` to a guess of
/// `targets_{t+k}`, scored against `n_neg` negatives drawn uniformly from every other
/// row of the batch. The loss is the mean over horizons of the batch-mean cross-entropy.
/// Predictor weight gradients are accumulated.
pub fn cpc_infonce_loss<T: Real, R: Rng + ?Sized>(
    context: &[T],
    targets: &[T],
    batch: usize,
    time: usize,
    predictors: &mut [Linear<T>],
    n_neg: usize,
    rng: &mut R,
) -> Result<InfoNce<T>, ModelError> {
    let horizon = predictors.len();
    if horizon == 0 || time <= horizon {
        return Err(ModelError::HorizonTooLong { horizon, time });
    }
    let rows_total = batch * time;
    if rows_total < 2 || n_neg == 0 {
        return Err(ModelError::TooFewNegatives { rows: rows_total });
    }
    let c = context.len() / rows_total;
    let d = targets.len() / rows_total;
    if predictors[0].in_dim() != c || predictors[0].out_dim() != d {
        return Err(ModelError::Dim { expected: c, got: predictors[0].in_dim() });
    }
    let mut grad_context = vec![T::zero(); context.len()];
    let mut grad_targets = vec![T::zero(); targets.len()];
    let mut accuracy = Vec::with_capacity(horizon);
    let mut loss = 0.0;
    let inv_k = T::of(1.0 / horizon as f64);
    let width = 1 + n_neg;

    for (ki, pred_layer) in predictors.iter_mut().enumerate() {
        let k = ki + 1;
        let src: Vec<usize> = (0..batch).flat_map(|b| (0..time - k).map(move |t| b * time + t)).collect();
        let rows = src.len();
        let mut ctx = Vec::with_capacity(rows * c);
        for &r in &src {
            ctx.extend_from_slice(&context[r * c..(r + 1) * c]);
        }
        let ctx = Tensor::from_vec(&[rows, c], ctx)?;
        let pred = linear_forward(&ctx, &pred_layer.weight, None)?;

        let mut cand = Vec::with_capacity(rows * width);
        let mut logits = Vec::with_capacity(rows * width);
        let mut correct = 0usize;
        for (r, &s) in src.iter().enumerate() {
            let p = &pred.data()[r * d..(r + 1) * d];
            let pos = s + k;
            cand.push(pos);
            for _ in 0..n_neg {
                let j = rng.random_range(0..rows_total - 1);
                cand.push(if j >= pos { j + 1 } else { j });
            }
            let row = &cand[r * width..];
            let scores: Vec<T> = row[..width].iter().map(|&j| dot(p, &targets[j * d..(j + 1) * d])).collect();
            if scores[1..].iter().all(|&v| scores[0] > v) {
                correct += 1;
            }
            logits.extend(scores);
        }
        let logits = Tensor::from_vec(&[rows, width], logits)?;
        let (lk, dlogits) = softmax_xent(&logits, &vec![0; rows])?;
        loss += lk.f64() / horizon as f64;
        accuracy.push(correct as f64 / rows as f64);

        let mut dpred = vec![T::zero(); rows * d];
        for r in 0..rows {
            let p = &pred.data()[r * d..(r + 1) * d];
            for w in 0..width {
                let g = dlogits.data()[r * width + w] * inv_k;
                let j = cand[r * width + w];
                for i in 0..d {
                    dpred[r * d + i] += g * targets[j * d + i];
                    grad_targets[j * d + i] += g * p[i];
                }
            }
        }
        let dpred = Tensor::from_vec(&[rows, d], dpred)?;
        let dctx = linear_backward(&ctx, &dpred, &mut pred_layer.weight, None)?;
        for (r, &s) in src.iter().enumerate() {
            for i in 0..c {
                grad_context[s * c + i] += dctx.data()[r * c + i];
            }
        }
    }
    Ok(InfoNce {
        loss,
        accuracy,
        grad_context,
        grad_targets,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Module;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn setup(seed: u64, c: usize, d: usize, k: usize) -> (ChaCha8Rng, Vec<Linear<f64>>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let preds = (0..k).map(|_| Linear::new(c, d, false, &mut rng)).collect();
        (rng, preds)
    }

    #[test]
    fn untrained_loss_near_uniform() {
        let (mut rng, mut preds) = setup(1, 8, 8, 4);
        let (b, t) = (4, 40);
        let ctx: Vec<f64> = (0..b * t * 8).map(|_| rng.random_range(-0.3..0.3)).collect();
        let tgt: Vec<f64> = (0..b * t * 8).map(|_| rng.random_range(-0.3..0.3)).collect();
        let out = cpc_infonce_loss(&ctx, &tgt, b, t, &mut preds, 16, &mut rng).unwrap();
        let chance = 17f64.ln();
        assert!((out.loss - chance).abs() < 0.1 * chance, "{}", out.loss);
    }

    #[test]
    fn perfect_scores_give_vanishing_loss() {
        // identity predictors and orthogonal one-hot targets scaled up
        let (b, t, d) = (1, 12, 12);
        let (mut rng, mut preds) = setup(2, d, d, 1);
        for p in preds.iter_mut() {
            p.weight.data_mut().iter_mut().enumerate().for_each(|(i, w)| *w = if i % (d + 1) == 0 { 1.0 } else { 0.0 });
        }
        let scale = 30.0;
        let tgt: Vec<f64> = (0..t).flat_map(|r| (0..d).map(move |i| if i == r { scale } else { 0.0 })).collect();
        // context at t equals target at t+1
        let mut ctx = vec![0.0; b * t * d];
        for r in 0..t - 1 {
            ctx[r * d..(r + 1) * d].copy_from_slice(&tgt[(r + 1) * d..(r + 2) * d]);
        }
        let out = cpc_infonce_loss(&ctx, &tgt, b, t, &mut preds, 4, &mut rng).unwrap();
        assert!(out.loss < 1e-6, "{}", out.loss);
        assert_eq!(out.accuracy, vec![1.0]);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let (b, t, c, d, k) = (2, 6, 3, 2, 2);
        let (mut rng, mut preds) = setup(3, c, d, k);
        let ctx: Vec<f64> = (0..b * t * c).map(|_| rng.random_range(-1.0..1.0)).collect();
        let tgt: Vec<f64> = (0..b * t * d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let run = |preds: &mut Vec<Linear<f64>>, ctx: &[f64], tgt: &[f64]| {
            let mut r = ChaCha8Rng::seed_from_u64(99);
            cpc_infonce_loss(ctx, tgt, b, t, preds, 3, &mut r).unwrap()
        };
        let out = run(&mut preds, &ctx, &tgt);
        let eps = 1e-6;
        let check = |a: f64, n: f64| assert!((a - n).abs() <= 1e-6 * a.abs().max(n.abs()).max(1e-3), "{a} vs {n}");
        for i in 0..ctx.len() {
            let (mut p, mut m) = (ctx.clone(), ctx.clone());
            p[i] += eps;
            m[i] -= eps;
            let n = (run(&mut preds.clone(), &p, &tgt).loss - run(&mut preds.clone(), &m, &tgt).loss) / (2.0 * eps);
            check(out.grad_context[i], n);
        }
        for i in 0..tgt.len() {
            let (mut p, mut m) = (tgt.clone(), tgt.clone());
            p[i] += eps;
            m[i] -= eps;
            let n = (run(&mut preds.clone(), &ctx, &p).loss - run(&mut preds.clone(), &ctx, &m).loss) / (2.0 * eps);
            check(out.grad_targets[i], n);
        }
        let analytic = preds[1].weight.grad().unwrap().to_vec();
        for i in 0..analytic.len() {
            let mut pp = preds.clone();
            pp[1].weight.data_mut()[i] += eps;
            let mut pm = preds.clone();
            pm[1].weight.data_mut()[i] -= eps;
            pp.iter_mut().chain(pm.iter_mut()).for_each(|l| l.zero_grad());
            let n = (run(&mut pp, &ctx, &tgt).loss - run(&mut pm, &ctx, &tgt).loss) / (2.0 * eps);
            check(analytic[i], n);
        }
    }

    #[test]
    fn short_sequences_rejected() {
        let (mut rng, mut preds) = setup(4, 2, 2, 4);
        let err = cpc_infonce_loss(&[0.0; 8], &[0.0; 8], 1, 4, &mut preds, 2, &mut rng).unwrap_err();
        assert!(matches!(err, ModelError::HorizonTooLong { .. }));
    }
}
