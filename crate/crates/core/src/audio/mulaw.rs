/// Number of quantisation levels used by the vocoder's sample head.
pub const MU_LAW_CHANNELS: usize = 256;

/// Compand `x` ∈ [-1, 1] and quantise to one of `channels` codes.
pub fn mulaw_encode(x: f64, channels: usize) -> usize {
    let mu = (channels - 1) as f64;
    let x = x.clamp(-1.0, 1.0);
    let f = x.signum() * (1.0 + mu * x.abs()).ln() / (1.0 + mu).ln();
    let q = ((f + 1.0) / 2.0 * mu + 0.5).floor();
    q.clamp(0.0, mu) as usize
}

/// Map a code back to the amplitude at the centre of its companded bin.
pub fn mulaw_decode(code: usize, channels: usize) -> f64 {
    let mu = (channels - 1) as f64;
    let f = 2.0 * code.min(channels - 1) as f64 / mu - 1.0;
    f.signum() * ((1.0 + mu).powf(f.abs()) - 1.0) / mu
}

#[cfg(test)]
mod tests {
    use super::*;

    fn compand(x: f64) -> f64 {
        x.signum() * (1.0 + 255.0 * x.abs()).ln() / 256f64.ln()
    }

    #[test]
    fn zero_and_endpoints() {
        assert_eq!(mulaw_encode(0.0, 256), 128);
        assert_eq!(mulaw_encode(1.0, 256), 255);
        assert_eq!(mulaw_encode(-1.0, 256), 0);
        assert!((mulaw_decode(255, 256) - 1.0).abs() < 1e-12);
        assert!((mulaw_decode(0, 256) + 1.0).abs() < 1e-12);
    }

    #[test]
    fn sweep_is_monotone_and_within_one_bin() {
        let bin = 2.0 / 255.0;
        let mut prev = 0;
        for i in 0..=1000 {
            let x = -1.0 + 2.0 * i as f64 / 1000.0;
            let q = mulaw_encode(x, 256);
            assert!(q >= prev);
            prev = q;
            let back = mulaw_decode(q, 256);
            // companded-domain error is at most half a bin
            assert!((compand(back) - compand(x)).abs() <= bin / 2.0 + 1e-12);
            if x.abs() < 0.01 {
                assert!((back - x).abs() < 1.0 / 255.0);
            }
        }
    }
}
