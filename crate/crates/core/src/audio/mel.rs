use std::f64::consts::PI;

use rand::Rng;
use rustfft::{num_complex::Complex, FftPlanner};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{AudioError, Waveform};

/// Geometry of the log-Mel front end.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureConfig {
    pub sample_rate: u32,
    pub n_mels: usize,
    pub win_ms: f64,
    pub hop: usize,
    pub n_fft: usize,
    pub fmin: f64,
    pub fmax: f64,
    pub log_floor: f64,
    /// Optional chunk length for splitting long recordings before feature extraction.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chunk_seconds: Option<f64>,
}

impl FeatureConfig {
    /// 16 kHz, 80 mels, 40 ms Hann window, 1024-point FFT, with the given hop.
    pub fn speech_16k(hop: usize) -> Self {
        Self {
            sample_rate: 16000,
            n_mels: 80,
            win_ms: 40.0,
            hop,
            n_fft: 1024,
            fmin: 0.0,
            fmax: 8000.0,
            log_floor: 1e-10,
            chunk_seconds: None,
        }
    }

    /// 24 kHz with a 12.5 ms (300-sample) shift and a 0–12 kHz band.
    pub fn speech_24k() -> Self {
        Self {
            sample_rate: 24000,
            n_mels: 80,
            win_ms: 40.0,
            hop: 300,
            n_fft: 1024,
            fmin: 0.0,
            fmax: 12000.0,
            log_floor: 1e-10,
            chunk_seconds: None,
        }
    }

    /// Small geometry for CPU-scale experiments.
    pub fn toy() -> Self {
        Self {
            sample_rate: 4000,
            n_mels: 20,
            win_ms: 16.0,
            hop: 16,
            n_fft: 128,
            fmin: 0.0,
            fmax: 2000.0,
            log_floor: 1e-10,
            chunk_seconds: None,
        }
    }

    pub fn win_length(&self) -> usize {
        (self.win_ms * self.sample_rate as f64 / 1000.0).round() as usize
    }

    pub fn validate(&self) -> Result<(), AudioError> {
        let bad = |m: String| Err(AudioError::InvalidConfig(m));
        let win = self.win_length();
        if self.sample_rate == 0 || self.n_mels == 0 || self.hop == 0 {
            return bad("sample_rate, n_mels and hop must be positive".into());
        }
        if self.hop > win || win > self.n_fft {
            return bad(format!(
                "need hop ≤ win ≤ n_fft, got hop {} win {} n_fft {}",
                self.hop, win, self.n_fft
            ));
        }
        if !(self.fmin >= 0.0 && self.fmin < self.fmax && self.fmax <= self.sample_rate as f64 / 2.0) {
            return bad(format!(
                "need 0 ≤ fmin < fmax ≤ sample_rate/2, got {}..{} at {} Hz",
                self.fmin, self.fmax, self.sample_rate
            ));
        }
        if !(self.log_floor > 0.0) {
            return bad("log_floor must be positive".into());
        }
        Ok(())
    }

    /// Short stable identifier of this geometry.
    pub fn config_hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("feature config serialises");
        let digest = Sha256::digest(&json);
        hex::encode(&digest[..8])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "lowercase")]
pub enum NormState {
    Raw,
    Log,
    MinMax { min: f64, max: f64 },
}

impl NormState {
    fn name(&self) -> String {
        match self {
            NormState::Raw => "raw".into(),
            NormState::Log => "log".into(),
            NormState::MinMax { .. } => "minmax".into(),
        }
    }
}

/// `n_mels × n_frames` grid stored row-major (one row per mel band).
#[derive(Debug, Clone, PartialEq)]
pub struct MelSpectrogram {
    pub n_mels: usize,
    pub n_frames: usize,
    pub values: Vec<f64>,
    pub config_hash: String,
    pub norm_state: NormState,
}

impl MelSpectrogram {
    pub fn new(
        n_mels: usize,
        n_frames: usize,
        values: Vec<f64>,
        config_hash: impl Into<String>,
        norm_state: NormState,
    ) -> Self {
        assert_eq!(values.len(), n_mels * n_frames, "mel grid size mismatch");
        Self {
            n_mels,
            n_frames,
            values,
            config_hash: config_hash.into(),
            norm_state,
        }
    }

    pub fn get(&self, mel: usize, frame: usize) -> f64 {
        self.values[mel * self.n_frames + frame]
    }

    /// Frames `[start, start + len)`.
    pub fn slice_frames(&self, start: usize, len: usize) -> MelSpectrogram {
        let mut values = Vec::with_capacity(self.n_mels * len);
        for m in 0..self.n_mels {
            let row = m * self.n_frames;
            values.extend_from_slice(&self.values[row + start..row + start + len]);
        }
        MelSpectrogram::new(self.n_mels, len, values, self.config_hash.clone(), self.norm_state)
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.values
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }
}

/// Number of whole analysis windows: `1 + floor((len − win) / hop)`, zero when `len < win`.
pub fn frame_count(len: usize, win: usize, hop: usize) -> usize {
    if len < win {
        0
    } else {
        1 + (len - win) / hop
    }
}

/// Periodic Hann window.
pub fn hann_window(len: usize) -> Vec<f64> {
    (0..len)
        .map(|n| 0.5 - 0.5 * (2.0 * PI * n as f64 / len as f64).cos())
        .collect()
}

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// HTK-scale triangular filters with unit area in Hz, shape `n_mels × (n_fft/2 + 1)`.
///
/// Also returns the centre frequency of each filter.
pub fn mel_filterbank(cfg: &FeatureConfig) -> (Vec<f64>, Vec<f64>) {
    let n_bins = cfg.n_fft / 2 + 1;
    let lo = hz_to_mel(cfg.fmin);
    let hi = hz_to_mel(cfg.fmax);
    let edges: Vec<f64> = (0..cfg.n_mels + 2)
        .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (cfg.n_mels + 1) as f64))
        .collect();
    let bin_hz = cfg.sample_rate as f64 / cfg.n_fft as f64;
    let mut fb = vec![0.0; cfg.n_mels * n_bins];
    for m in 0..cfg.n_mels {
        let (left, centre, right) = (edges[m], edges[m + 1], edges[m + 2]);
        let height = 2.0 / (right - left);
        for k in 0..n_bins {
            let f = k as f64 * bin_hz;
            let w = if f <= left || f >= right {
                0.0
            } else if f <= centre {
                (f - left) / (centre - left)
            } else {
                (right - f) / (right - centre)
            };
            fb[m * n_bins + k] = w * height;
        }
    }
    (fb, edges[1..=cfg.n_mels].to_vec())
}

/// Magnitude STFT (Hann window, no centring) → mel filterbank → `ln(max(v, log_floor))`.
pub fn log_mel(w: &Waveform, cfg: &FeatureConfig) -> Result<MelSpectrogram, AudioError> {
    cfg.validate()?;
    let win = cfg.win_length();
    let n_frames = frame_count(w.len(), win, cfg.hop);
    if n_frames == 0 {
        return Err(AudioError::TooShort { len: w.len(), win });
    }
    let window = hann_window(win);
    let (fb, _) = mel_filterbank(cfg);
    let n_bins = cfg.n_fft / 2 + 1;
    let fft = FftPlanner::<f64>::new().plan_fft_forward(cfg.n_fft);
    let mut buf = vec![Complex::new(0.0, 0.0); cfg.n_fft];
    let mut mag = vec![0.0; n_bins];
    let mut values = vec![0.0; cfg.n_mels * n_frames];
    let x = w.samples();

    for t in 0..n_frames {
        let start = t * cfg.hop;
        for (i, b) in buf.iter_mut().enumerate() {
            *b = if i < win {
                Complex::new(x[start + i] as f64 * window[i], 0.0)
            } else {
                Complex::new(0.0, 0.0)
            };
        }
        fft.process(&mut buf);
        for (m, b) in mag.iter_mut().zip(&buf) {
            *m = b.norm();
        }
        for m in 0..cfg.n_mels {
            let row = &fb[m * n_bins..(m + 1) * n_bins];
            let e: f64 = row.iter().zip(&mag).map(|(a, b)| a * b).sum();
            values[m * n_frames + t] = e.max(cfg.log_floor).ln();
        }
    }
    Ok(MelSpectrogram::new(
        cfg.n_mels,
        n_frames,
        values,
        cfg.config_hash(),
        NormState::Log,
    ))
}

/// Map log-Mel values to [0, 1] using `stats` (global) or this spectrogram's own range.
///
/// Values outside a supplied global range are clamped. A degenerate range yields all zeros.
pub fn minmax_normalize(
    m: &MelSpectrogram,
    stats: Option<(f64, f64)>,
) -> Result<MelSpectrogram, AudioError> {
    if m.norm_state != NormState::Log {
        return Err(AudioError::WrongNormState {
            expected: "log",
            found: m.norm_state.name(),
        });
    }
    let (min, max) = stats.unwrap_or_else(|| m.min_max());
    let span = max - min;
    let values = if span > 0.0 {
        m.values.iter().map(|v| ((v - min) / span).clamp(0.0, 1.0)).collect()
    } else {
        vec![0.0; m.values.len()]
    };
    Ok(MelSpectrogram {
        values,
        norm_state: NormState::MinMax { min, max },
        ..m.clone()
    })
}

/// Invert [`minmax_normalize`] using the recorded range.
pub fn denormalize(m: &MelSpectrogram) -> Result<MelSpectrogram, AudioError> {
    let NormState::MinMax { min, max } = m.norm_state else {
        return Err(AudioError::WrongNormState {
            expected: "minmax",
            found: m.norm_state.name(),
        });
    };
    let span = max - min;
    let values = m.values.iter().map(|v| min + v * span).collect();
    Ok(MelSpectrogram {
        values,
        norm_state: NormState::Log,
        ..m.clone()
    })
}

/// A mel slice and the audio it was computed from.
#[derive(Debug, Clone)]
pub struct TrainingWindow {
    pub frame_index: usize,
    pub mel: MelSpectrogram,
    pub audio: Vec<f32>,
}

/// Pick a random `frames`-frame slice and the `frames · hop` audio samples starting at
/// `frame_index · hop`.
pub fn sample_training_window<R: Rng + ?Sized>(
    mel: &MelSpectrogram,
    audio: &Waveform,
    frames: usize,
    hop: usize,
    rng: &mut R,
) -> Result<TrainingWindow, AudioError> {
    let too_short = || AudioError::WindowTooLong {
        frames,
        available: mel.n_frames,
        samples: audio.len(),
    };
    if frames == 0 || hop == 0 || mel.n_frames < frames || audio.len() < frames * hop {
        return Err(too_short());
    }
    let last = (mel.n_frames - frames).min(audio.len() / hop - frames);
    let frame_index = rng.random_range(0..=last);
    let start = frame_index * hop;
    Ok(TrainingWindow {
        frame_index,
        mel: mel.slice_frames(frame_index, frames),
        audio: audio.samples()[start..start + frames * hop].to_vec(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tone(freq: f64, len: usize, rate: u32) -> Waveform {
        let s = (0..len)
            .map(|n| (0.5 * (2.0 * PI * freq * n as f64 / rate as f64).sin()) as f32)
            .collect();
        Waveform::new(s, rate).unwrap()
    }

    #[test]
    fn silence_hits_the_floor() {
        let cfg = FeatureConfig::speech_16k(160);
        let w = Waveform::new(vec![0.0; 4000], 16000).unwrap();
        let m = log_mel(&w, &cfg).unwrap();
        let floor = 1e-10f64.ln();
        assert!(m.values.iter().all(|&v| v == floor));
        assert_eq!(m.norm_state, NormState::Log);
    }

    #[test]
    fn thirty_two_frames_at_hop_160() {
        let cfg = FeatureConfig::speech_16k(160);
        let win = cfg.win_length();
        assert_eq!(win, 640);
        let w = Waveform::new(vec![0.0; 5120 + win - 1], 16000).unwrap();
        assert_eq!(log_mel(&w, &cfg).unwrap().n_frames, 32);
    }

    #[test]
    fn shorter_than_window_is_error() {
        let cfg = FeatureConfig::speech_16k(160);
        let w = Waveform::new(vec![0.0; 639], 16000).unwrap();
        assert!(matches!(log_mel(&w, &cfg), Err(AudioError::TooShort { .. })));
    }

    #[test]
    fn tone_at_filter_centre_peaks_at_that_filter() {
        let cfg = FeatureConfig::speech_16k(160);
        let (_, centres) = mel_filterbank(&cfg);
        for m in [20, 40, 60, 75] {
            let w = tone(centres[m], 4000, 16000);
            let mel = log_mel(&w, &cfg).unwrap();
            let t = mel.n_frames / 2;
            let best = (0..cfg.n_mels)
                .max_by(|&a, &b| mel.get(a, t).total_cmp(&mel.get(b, t)))
                .unwrap();
            assert_eq!(best, m, "tone at {} Hz", centres[m]);
        }
    }

    #[test]
    fn filters_have_unit_area() {
        let cfg = FeatureConfig::speech_16k(160);
        let (fb, _) = mel_filterbank(&cfg);
        let n_bins = cfg.n_fft / 2 + 1;
        let bin_hz = cfg.sample_rate as f64 / cfg.n_fft as f64;
        // the upper filters span many bins, so a Riemann sum is accurate
        for m in 40..80 {
            let area: f64 = fb[m * n_bins..(m + 1) * n_bins].iter().sum::<f64>() * bin_hz;
            assert!((area - 1.0).abs() < 0.02, "filter {m} area {area}");
        }
    }

    #[test]
    fn tone_energy_confined_to_overlapping_frames() {
        let cfg = FeatureConfig::speech_16k(160);
        let win = cfg.win_length();
        let silence = 3200;
        let mut s = vec![0.0f32; silence];
        s.extend(tone(1000.0, 3200, 16000).into_samples());
        let m = log_mel(&Waveform::new(s, 16000).unwrap(), &cfg).unwrap();
        let floor = 1e-10f64.ln();
        for t in 0..m.n_frames {
            let touches_tone = t * cfg.hop + win > silence;
            let all_floor = (0..cfg.n_mels).all(|b| m.get(b, t) == floor);
            assert_eq!(all_floor, !touches_tone, "frame {t}");
        }
    }

    #[test]
    fn minmax_affine_map() {
        let m = MelSpectrogram::new(1, 3, vec![0.0, 5.0, 10.0], "x", NormState::Log);
        let n = minmax_normalize(&m, None).unwrap();
        assert_eq!(n.values, vec![0.0, 0.5, 1.0]);
        assert_eq!(n.norm_state, NormState::MinMax { min: 0.0, max: 10.0 });
    }

    #[test]
    fn minmax_constant_gives_zeros() {
        let m = MelSpectrogram::new(2, 2, vec![3.0; 4], "x", NormState::Log);
        let n = minmax_normalize(&m, None).unwrap();
        assert_eq!(n.values, vec![0.0; 4]);
    }

    #[test]
    fn minmax_requires_log_state() {
        let m = MelSpectrogram::new(1, 1, vec![0.0], "x", NormState::Raw);
        assert!(minmax_normalize(&m, None).is_err());
    }

    #[test]
    fn training_windows_match_table_geometry() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for (frames, hop, expected) in [(32, 160, 5120), (102, 80, 8160), (64, 128, 8192)] {
            let n_frames = 150;
            let mel = MelSpectrogram::new(2, n_frames, vec![0.0; 2 * n_frames], "x", NormState::Log);
            let audio = Waveform::new(vec![0.0; n_frames * hop + 640], 16000).unwrap();
            let win = sample_training_window(&mel, &audio, frames, hop, &mut rng).unwrap();
            assert_eq!(win.audio.len(), expected);
            assert_eq!(win.mel.n_frames, frames);
        }
    }

    #[test]
    fn training_window_is_aligned() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let hop = 4;
        let n_frames = 20;
        // mel value at frame t equals the audio sample at t * hop
        let audio: Vec<f32> = (0..n_frames * hop).map(|i| i as f32).collect();
        let mel_vals: Vec<f64> = (0..n_frames).map(|t| (t * hop) as f64).collect();
        let mel = MelSpectrogram::new(1, n_frames, mel_vals, "x", NormState::Log);
        let wave = Waveform::new(audio, 100).unwrap();
        for _ in 0..20 {
            let w = sample_training_window(&mel, &wave, 5, hop, &mut rng).unwrap();
            assert_eq!(w.mel.values[0], w.audio[0] as f64);
            assert_eq!(w.frame_index * hop, w.audio[0] as usize);
        }
    }

    #[test]
    fn short_utterance_window_errors() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mel = MelSpectrogram::new(1, 10, vec![0.0; 10], "x", NormState::Log);
        let wave = Waveform::new(vec![0.0; 1600], 16000).unwrap();
        assert!(sample_training_window(&mel, &wave, 32, 160, &mut rng).is_err());
    }

    fn naive_frames(len: usize, win: usize, hop: usize) -> usize {
        let mut n = 0;
        let mut start = 0;
        while start + win <= len {
            n += 1;
            start += hop;
        }
        n
    }

    proptest! {
        #[test]
        fn frame_formula_matches_naive(len in 0usize..5000, win in 1usize..700, hop in 1usize..300) {
            prop_assert_eq!(frame_count(len, win, hop), naive_frames(len, win, hop));
        }

        #[test]
        fn minmax_round_trip(values in proptest::collection::vec(-30.0f64..5.0, 2..60)) {
            let n = values.len();
            let m = MelSpectrogram::new(1, n, values.clone(), "x", NormState::Log);
            let norm = minmax_normalize(&m, None).unwrap();
            prop_assert!(norm.values.iter().all(|v| (0.0..=1.0).contains(v)));
            let (lo, hi) = m.min_max();
            if hi > lo {
                let back = denormalize(&norm).unwrap();
                for (a, b) in back.values.iter().zip(&values) {
                    prop_assert!((a - b).abs() < 1e-12);
                }
            }
        }
    }
}
