//! Time-axis upsampling of `channels × time` feature maps, and the scale-chain rule
//! tying the vocoder's two upsampling factors to the hop length.
//!
//! Every operator is linear, so each also provides its adjoint, which is what the
//! vocoder's backward pass needs.

use std::fmt;
use std::str::FromStr;

use rustfft::{num_complex::Complex, FftPlanner};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum UpsampleError {
    #[error("scale factor must be at least 1")]
    ZeroScale,
    #[error("feature map shape mismatch: expected {expected} values, got {got}")]
    Shape { expected: usize, got: usize },
    #[error("scale chain {s1}:{s2} gives s1·s2 = {product}, but 2·hop = {expected} (hop {hop})")]
    ChainMismatch {
        s1: usize,
        s2: usize,
        hop: usize,
        product: usize,
        expected: usize,
    },
    #[error("unknown upsampler '{0}' (expected nearest, linear, fourier_tile or fourier_pad)")]
    UnknownKind(String),
}

/// `channels × len` grid, channel-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub channels: usize,
    pub len: usize,
    pub values: Vec<f64>,
    /// Frames or samples per second; carried along, never used in arithmetic.
    pub time_rate: f64,
}

impl FeatureMap {
    pub fn new(channels: usize, len: usize, values: Vec<f64>) -> Result<Self, UpsampleError> {
        if values.len() != channels * len {
            return Err(UpsampleError::Shape {
                expected: channels * len,
                got: values.len(),
            });
        }
        Ok(Self {
            channels,
            len,
            values,
            time_rate: 0.0,
        })
    }

    pub fn with_rate(mut self, time_rate: f64) -> Self {
        self.time_rate = time_rate;
        self
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        &self.values[c * self.len..(c + 1) * self.len]
    }

    fn map_channels(&self, s: usize, out_len: usize, f: impl Fn(&[f64], &mut [f64])) -> FeatureMap {
        let mut values = vec![0.0; self.channels * out_len];
        for c in 0..self.channels {
            f(self.channel(c), &mut values[c * out_len..(c + 1) * out_len]);
        }
        FeatureMap {
            channels: self.channels,
            len: out_len,
            values,
            time_rate: self.time_rate * s as f64,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Upsampler {
    Nearest,
    Linear,
    FourierTile,
    FourierPad,
}

impl Upsampler {
    pub const ALL: [Upsampler; 4] = [
        Upsampler::Nearest,
        Upsampler::Linear,
        Upsampler::FourierTile,
        Upsampler::FourierPad,
    ];

    pub fn apply(self, f: &FeatureMap, s: usize) -> Result<FeatureMap, UpsampleError> {
        match self {
            Upsampler::Nearest => upsample_nearest(f, s),
            Upsampler::Linear => upsample_linear(f, s),
            Upsampler::FourierTile => upsample_fourier_tile(f, s),
            Upsampler::FourierPad => upsample_fourier_pad(f, s),
        }
    }

    /// Transpose of [`Upsampler::apply`]: maps a length `s·len` map back to length `len`.
    pub fn adjoint(self, g: &FeatureMap, s: usize, len: usize) -> Result<FeatureMap, UpsampleError> {
        if s == 0 {
            return Err(UpsampleError::ZeroScale);
        }
        if g.len != s * len {
            return Err(UpsampleError::Shape {
                expected: g.channels * s * len,
                got: g.values.len(),
            });
        }
        let out = match self {
            Upsampler::Nearest => g.map_channels(1, len, |x, y| {
                for (n, v) in x.iter().enumerate() {
                    y[n / s] += v;
                }
            }),
            Upsampler::Linear => g.map_channels(1, len, |x, y| {
                for (n, v) in x.iter().enumerate() {
                    let (i, j, w) = linear_taps(n, len, s);
                    y[i] += (1.0 - w) * v;
                    if w != 0.0 {
                        y[j] += w * v;
                    }
                }
            }),
            Upsampler::FourierTile => g.map_channels(1, len, |x, y| {
                for (n, v) in y.iter_mut().enumerate() {
                    *v = x[n * s];
                }
            }),
            Upsampler::FourierPad => fourier_pad_adjoint(g, len),
        };
        Ok(FeatureMap {
            time_rate: g.time_rate / s as f64,
            ..out
        })
    }
}

impl fmt::Display for Upsampler {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Upsampler::Nearest => "nearest",
            Upsampler::Linear => "linear",
            Upsampler::FourierTile => "fourier_tile",
            Upsampler::FourierPad => "fourier_pad",
        })
    }
}

impl FromStr for Upsampler {
    type Err = UpsampleError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Upsampler::ALL
            .into_iter()
            .find(|u| u.to_string() == s)
            .ok_or_else(|| UpsampleError::UnknownKind(s.to_string()))
    }
}

/// `out[c][n] = f[c][n / s]`.
pub fn upsample_nearest(f: &FeatureMap, s: usize) -> Result<FeatureMap, UpsampleError> {
    if s == 0 {
        return Err(UpsampleError::ZeroScale);
    }
    Ok(f.map_channels(s, f.len * s, |x, y| {
        for (n, v) in y.iter_mut().enumerate() {
            *v = x[n / s];
        }
    }))
}

/// Input index pair and blend weight for output `n` under the align-corners convention.
fn linear_taps(n: usize, len: usize, s: usize) -> (usize, usize, f64) {
    let out_len = len * s;
    if len == 1 || out_len == 1 {
        return (0, 0, 0.0);
    }
    let pos = n as f64 * (len - 1) as f64 / (out_len - 1) as f64;
    let i = (pos.floor() as usize).min(len - 2);
    (i, i + 1, pos - i as f64)
}

/// Piecewise-linear interpolation; first and last outputs coincide with the first and last inputs.
pub fn upsample_linear(f: &FeatureMap, s: usize) -> Result<FeatureMap, UpsampleError> {
    if s == 0 {
        return Err(UpsampleError::ZeroScale);
    }
    let len = f.len;
    Ok(f.map_channels(s, len * s, |x, y| {
        for (n, v) in y.iter_mut().enumerate() {
            let (i, j, w) = linear_taps(n, len, s);
            *v = if w == 0.0 { x[i] } else { (1.0 - w) * x[i] + w * x[j] };
        }
    }))
}

fn dft(x: &[Complex<f64>], inverse: bool) -> Vec<Complex<f64>> {
    let mut planner = FftPlanner::new();
    let fft = if inverse {
        planner.plan_fft_inverse(x.len())
    } else {
        planner.plan_fft_forward(x.len())
    };
    let mut buf = x.to_vec();
    fft.process(&mut buf);
    buf
}

fn to_complex(x: &[f64]) -> Vec<Complex<f64>> {
    x.iter().map(|&v| Complex::new(v, 0.0)).collect()
}

/// Replicate the length-T spectrum `s` times and invert at length `sT`.
///
/// Equivalent to inserting `s − 1` zeros after every sample.
pub fn upsample_fourier_tile(f: &FeatureMap, s: usize) -> Result<FeatureMap, UpsampleError> {
    if s == 0 {
        return Err(UpsampleError::ZeroScale);
    }
    let len = f.len;
    let out_len = len * s;
    Ok(f.map_channels(s, out_len, |x, y| {
        let spec = dft(&to_complex(x), false);
        let tiled: Vec<_> = (0..out_len).map(|k| spec[k % len]).collect();
        let time = dft(&tiled, true);
        for (v, t) in y.iter_mut().zip(&time) {
            *v = t.re / out_len as f64;
        }
    }))
}

/// Zero-pad the spectrum at the Nyquist split to length `sT`, invert, and scale by `s`:
/// periodic band-limited interpolation. For even T the Nyquist bin is split in half
/// between the two edges so the result stays real.
pub fn upsample_fourier_pad(f: &FeatureMap, s: usize) -> Result<FeatureMap, UpsampleError> {
    if s == 0 {
        return Err(UpsampleError::ZeroScale);
    }
    let len = f.len;
    let out_len = len * s;
    Ok(f.map_channels(s, out_len, |x, y| {
        let spec = dft(&to_complex(x), false);
        let padded = pad_spectrum(&spec, out_len);
        let time = dft(&padded, true);
        // inverse FFT is unnormalised: divide by sT, then scale by s
        for (v, t) in y.iter_mut().zip(&time) {
            *v = t.re / len as f64;
        }
    }))
}

fn pad_spectrum(spec: &[Complex<f64>], out_len: usize) -> Vec<Complex<f64>> {
    let len = spec.len();
    let mut out = vec![Complex::new(0.0, 0.0); out_len];
    if out_len == len {
        out.copy_from_slice(spec);
        return out;
    }
    let half = len / 2;
    if len % 2 == 0 {
        out[..half].copy_from_slice(&spec[..half]);
        let nyq = spec[half] * 0.5;
        out[half] = nyq;
        out[out_len - half] = nyq;
        for k in half + 1..len {
            out[out_len - len + k] = spec[k];
        }
    } else {
        out[..=half].copy_from_slice(&spec[..=half]);
        for k in half + 1..len {
            out[out_len - len + k] = spec[k];
        }
    }
    out
}

/// Transpose of `pad_spectrum`: fold a length-`sT` spectrum back to length T.
fn truncate_spectrum(spec: &[Complex<f64>], len: usize) -> Vec<Complex<f64>> {
    let out_len = spec.len();
    if out_len == len {
        return spec.to_vec();
    }
    let mut out = vec![Complex::new(0.0, 0.0); len];
    let half = len / 2;
    if len % 2 == 0 {
        out[..half].copy_from_slice(&spec[..half]);
        out[half] = (spec[half] + spec[out_len - half]) * 0.5;
    } else {
        out[..=half].copy_from_slice(&spec[..=half]);
    }
    for k in half + 1..len {
        out[k] = spec[out_len - len + k];
    }
    out
}

// The operator is M = (s / sT) · conj(F_sT) · P · F_T. Both DFT matrices are symmetric,
// so Mᵀ = (1 / T) · F_T · Pᵀ · conj(F_sT).
fn fourier_pad_adjoint(g: &FeatureMap, len: usize) -> FeatureMap {
    g.map_channels(1, len, |x, y| {
        let spec = dft(&to_complex(x), true);
        let folded = truncate_spectrum(&spec, len);
        let time = dft(&folded, false);
        for (v, t) in y.iter_mut().zip(&time) {
            *v = t.re / len as f64;
        }
    })
}

/// The vocoder's two upsampling factors around its frame-level LSTM.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScaleChain {
    pub s1: usize,
    pub s2: usize,
    pub hop: usize,
}

impl ScaleChain {
    pub fn new(s1: usize, s2: usize, hop: usize) -> Self {
        Self { s1, s2, hop }
    }
}

/// Units arrive at half the mel frame rate, so the chain must satisfy `s1 · s2 = 2 · hop`.
pub fn validate_scale_chain(chain: &ScaleChain) -> Result<(), UpsampleError> {
    if chain.s1 == 0 || chain.s2 == 0 {
        return Err(UpsampleError::ZeroScale);
    }
    let product = chain.s1 * chain.s2;
    let expected = 2 * chain.hop;
    if product != expected {
        return Err(UpsampleError::ChainMismatch {
            s1: chain.s1,
            s2: chain.s2,
            hop: chain.hop,
            product,
            expected,
        });
    }
    Ok(())
}
