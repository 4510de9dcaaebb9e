use super::MetricError;
use crate::audio::MelSpectrogram;

pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;
const SSIM_WINDOW: usize = 7;
const SSIM_SIGMA: f64 = 1.5;

/// Trim both spectrograms to the shorter frame count; more than one frame of
/// difference (or a mel-count mismatch) is an error.
pub fn align_frames(a: &MelSpectrogram, b: &MelSpectrogram) -> Result<(MelSpectrogram, MelSpectrogram), MetricError> {
    if a.n_mels != b.n_mels {
        return Err(MetricError::Shape(format!("{} vs {} mel bins", a.n_mels, b.n_mels)));
    }
    if a.n_frames.abs_diff(b.n_frames) > 1 {
        return Err(MetricError::Shape(format!("{} vs {} frames", a.n_frames, b.n_frames)));
    }
    let n = a.n_frames.min(b.n_frames);
    Ok((a.slice_frames(0, n), b.slice_frames(0, n)))
}

fn same_shape(a: &MelSpectrogram, b: &MelSpectrogram) -> Result<(), MetricError> {
    if a.n_mels != b.n_mels || a.n_frames != b.n_frames {
        return Err(MetricError::Shape(format!(
            "{}x{} vs {}x{}",
            a.n_mels, a.n_frames, b.n_mels, b.n_frames
        )));
    }
    if a.values.is_empty() {
        return Err(MetricError::Empty("spectrogram"));
    }
    Ok(())
}

/// Mean squared difference of two equally shaped spectrograms.
pub fn ls_mse(a: &MelSpectrogram, b: &MelSpectrogram) -> Result<f64, MetricError> {
    same_shape(a, b)?;
    let sum: f64 = a.values.iter().zip(&b.values).map(|(x, y)| (x - y) * (x - y)).sum();
    Ok(sum / a.values.len() as f64)
}

/// `10·log10(peak² / MSE)` in dB; `+∞` when the inputs are identical.
pub fn psnr(a: &MelSpectrogram, b: &MelSpectrogram, peak: f64) -> Result<f64, MetricError> {
    let mse = ls_mse(a, b)?;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (peak * peak / mse).log10())
}

fn gaussian(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let w: Vec<f64> = (0..size).map(|i| (-((i as f64 - c).powi(2)) / (2.0 * sigma * sigma)).exp()).collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|v| v / s).collect()
}

/// Mean structural similarity over every valid 7×7 Gaussian window (σ = 1.5, dynamic range 1).
/// Grids smaller than 7 in a dimension use a window as large as that dimension.
pub fn ssim(a: &MelSpectrogram, b: &MelSpectrogram) -> Result<f64, MetricError> {
    same_shape(a, b)?;
    let (h, w) = (a.n_mels, a.n_frames);
    let (wh, ww) = (SSIM_WINDOW.min(h), SSIM_WINDOW.min(w));
    let (gh, gw) = (gaussian(wh, SSIM_SIGMA), gaussian(ww, SSIM_SIGMA));
    let mut total = 0.0;
    let mut count = 0usize;
    for i0 in 0..=h - wh {
        for j0 in 0..=w - ww {
            let (mut mx, mut my, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for (di, &wi) in gh.iter().enumerate() {
                for (dj, &wj) in gw.iter().enumerate() {
                    let g = wi * wj;
                    let x = a.get(i0 + di, j0 + dj);
                    let y = b.get(i0 + di, j0 + dj);
                    mx += g * x;
                    my += g * y;
                    sxx += g * x * x;
                    syy += g * y * y;
                    sxy += g * x * y;
                }
            }
            let (vx, vy, cov) = (sxx - mx * mx, syy - my * my, sxy - mx * my);
            let num = (2.0 * mx * my + SSIM_C1) * (2.0 * cov + SSIM_C2);
            let den = (mx * mx + my * my + SSIM_C1) * (vx + vy + SSIM_C2);
            total += num / den;
            count += 1;
        }
    }
    Ok(total / count as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio::NormState;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn grid(h: usize, w: usize, f: impl Fn(usize, usize) -> f64) -> MelSpectrogram {
        let values = (0..h).flat_map(|i| (0..w).map(move |j| (i, j))).map(|(i, j)| f(i, j)).collect();
        MelSpectrogram::new(h, w, values, "t", NormState::MinMax { min: 0.0, max: 1.0 })
    }

    fn random(h: usize, w: usize, seed: u64) -> MelSpectrogram {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let v: Vec<f64> = (0..h * w).map(|_| rng.random_range(0.0..0.9)).collect();
        grid(h, w, |i, j| v[i * w + j])
    }

    #[test]
    fn identity() {
        let a = random(10, 12, 1);
        assert_eq!(ls_mse(&a, &a).unwrap(), 0.0);
        assert_eq!(psnr(&a, &a, 1.0).unwrap(), f64::INFINITY);
        assert_eq!(ssim(&a, &a).unwrap(), 1.0);
    }

    #[test]
    fn uniform_offset_gives_twenty_db() {
        let a = random(8, 9, 2);
        let b = grid(8, 9, |i, j| a.get(i, j) + 0.1);
        assert!((ls_mse(&a, &b).unwrap() - 0.01).abs() < 1e-12);
        assert!((psnr(&a, &b, 1.0).unwrap() - 20.0).abs() < 1e-9);
    }

    #[test]
    fn constant_grids() {
        let a = grid(9, 9, |_, _| 0.0);
        let b = grid(9, 9, |_, _| 1.0);
        let expected = SSIM_C1 / (1.0 + SSIM_C1);
        assert!((ssim(&a, &b).unwrap() - expected).abs() < 1e-15);
        assert!((expected - 9.999e-5).abs() < 1e-8);
    }

    #[test]
    fn symmetric_and_psnr_mse_relation() {
        let (a, b) = (random(12, 20, 3), random(12, 20, 4));
        assert!((ssim(&a, &b).unwrap() - ssim(&b, &a).unwrap()).abs() < 1e-15);
        let mse = ls_mse(&a, &b).unwrap();
        assert!((psnr(&a, &b, 1.0).unwrap() + 10.0 * mse.log10()).abs() < 1e-12);
    }

    #[test]
    fn small_grids_shrink_window() {
        let a = random(3, 4, 5);
        assert_eq!(ssim(&a, &a).unwrap(), 1.0);
    }

    #[test]
    fn alignment_tolerates_one_frame() {
        let (a, b) = (random(4, 10, 6), random(4, 11, 7));
        let (x, y) = align_frames(&a, &b).unwrap();
        assert_eq!((x.n_frames, y.n_frames), (10, 10));
        assert!(align_frames(&a, &random(4, 12, 8)).is_err());
        assert!(ls_mse(&a, &b).is_err());
    }
}
