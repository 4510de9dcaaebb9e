use super::{AudioError, Waveform};

/// Sinc zero crossings kept on each side of the kernel centre (at the lower of the two rates).
const ZERO_CROSSINGS: f64 = 32.0;
const KAISER_BETA: f64 = 8.6;

/// Band-limited polyphase resampling with a Kaiser-windowed sinc kernel.
///
/// The output length is `round(len · target / source)`. Each phase's taps are
/// renormalised over the samples actually available, so DC is preserved exactly,
/// including at the signal edges.
pub fn resample(w: &Waveform, target_rate: u32) -> Result<Waveform, AudioError> {
    if target_rate == 0 {
        return Err(AudioError::InvalidConfig("target rate must be positive".into()));
    }
    let src = w.sample_rate();
    if src == target_rate {
        return Ok(w.clone());
    }
    let g = gcd(src as u64, target_rate as u64);
    let up = target_rate as u64 / g;
    let down = src as u64 / g;
    let len = w.len() as u64;
    let out_len = ((len * target_rate as u64 + src as u64 / 2) / src as u64) as usize;

    let cutoff = (target_rate as f64 / src as f64).min(1.0);
    let half_width = ZERO_CROSSINGS / cutoff;
    let taps_each_side = half_width.ceil() as i64;
    let taps = (2 * taps_each_side) as usize;
    let i0_beta = bessel_i0(KAISER_BETA);

    // table[phase][j] is the weight of input sample (i0 - taps_each_side + 1 + j)
    let mut table = vec![0.0f64; up as usize * taps];
    for phase in 0..up as usize {
        let frac = phase as f64 / up as f64;
        for j in 0..taps {
            let offset = taps_each_side - 1 - j as i64;
            let d = offset as f64 + frac;
            table[phase * taps + j] = kernel(d, cutoff, half_width, i0_beta);
        }
    }

    let x = w.samples();
    let mut out = Vec::with_capacity(out_len);
    for n in 0..out_len as u64 {
        let pos = n * down;
        let i0 = (pos / up) as i64;
        let phase = (pos % up) as usize;
        let first = i0 - taps_each_side + 1;
        let row = &table[phase * taps..(phase + 1) * taps];
        let mut acc = 0.0;
        let mut norm = 0.0;
        for (j, &h) in row.iter().enumerate() {
            let k = first + j as i64;
            if k >= 0 && (k as u64) < len {
                acc += h * x[k as usize] as f64;
                norm += h;
            }
        }
        out.push(if norm.abs() > 1e-12 { (acc / norm) as f32 } else { 0.0 });
    }
    Waveform::new(out, target_rate)
}

fn kernel(d: f64, cutoff: f64, half_width: f64, i0_beta: f64) -> f64 {
    if d.abs() >= half_width {
        return 0.0;
    }
    let r = d / half_width;
    let window = bessel_i0(KAISER_BETA * (1.0 - r * r).sqrt()) / i0_beta;
    cutoff * sinc(cutoff * d) * window
}

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-12 {
        1.0
    } else {
        let px = std::f64::consts::PI * x;
        px.sin() / px
    }
}

/// Modified Bessel function of the first kind, order zero (power series).
fn bessel_i0(x: f64) -> f64 {
    let q = x * x / 4.0;
    let mut term = 1.0;
    let mut sum = 1.0;
    for k in 1..200 {
        term *= q / (k as f64 * k as f64);
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
    }
    sum
}

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        let t = a % b;
        a = b;
        b = t;
    }
    a
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn identity_when_rates_match() {
        let w = Waveform::new(vec![0.1, -0.2, 0.3], 16000).unwrap();
        assert_eq!(resample(&w, 16000).unwrap(), w);
    }

    #[test]
    fn dc_is_preserved() {
        let w = Waveform::new(vec![0.37; 800], 8000).unwrap();
        let r = resample(&w, 16000).unwrap();
        assert_eq!(r.len(), 1600);
        assert_eq!(r.sample_rate(), 16000);
        for &s in r.samples() {
            assert!((s - 0.37).abs() < 1e-6, "{s}");
        }
        let d = resample(&w, 5000).unwrap();
        assert_eq!(d.len(), 500);
        for &s in d.samples() {
            assert!((s - 0.37).abs() < 1e-6);
        }
    }

    #[test]
    fn sinusoid_upsampled_matches_analytic() {
        let f = 440.0;
        let src: Vec<f32> = (0..8000)
            .map(|n| (0.8 * (2.0 * PI * f * n as f64 / 8000.0).sin()) as f32)
            .collect();
        let w = Waveform::new(src, 8000).unwrap();
        let r = resample(&w, 16000).unwrap();
        assert_eq!(r.len(), 16000);
        // skip the kernel's reach at each edge, where the signal is truncated
        let margin = 2 * ZERO_CROSSINGS as usize + 2;
        let mut max_err = 0.0f64;
        for n in margin..r.len() - margin {
            let expected = 0.8 * (2.0 * PI * f * n as f64 / 16000.0).sin();
            max_err = max_err.max((r.samples()[n] as f64 - expected).abs());
        }
        assert!(max_err < 1e-3, "max error {max_err}");
    }

    #[test]
    fn duration_preserved_within_one_sample() {
        for (len, src, dst) in [(1001, 16000, 24000), (777, 44100, 16000), (5, 22050, 8000)] {
            let w = Waveform::new(vec![0.0; len], src).unwrap();
            let r = resample(&w, dst).unwrap();
            let exact = len as f64 * dst as f64 / src as f64;
            assert!((r.len() as f64 - exact).abs() <= 1.0);
        }
    }
}
