//! Log-Mel front end on a two-tone signal: frame count, loudest band per tone,
//! min-max normalisation and the mu-law round trip used by the vocoder.

use std::f64::consts::PI;

use textless::audio::{
    frame_count, log_mel, mel_filterbank, minmax_normalize, mulaw_decode, mulaw_encode, FeatureConfig, Waveform,
};

fn main() {
    let cfg = FeatureConfig::toy();
    let sr = cfg.sample_rate as f64;
    // 0.25 s at 300 Hz followed by 0.25 s at 1200 Hz
    let samples: Vec<f32> = (0..cfg.sample_rate as usize / 2)
        .map(|n| {
            let f = if n < cfg.sample_rate as usize / 4 { 300.0 } else { 1200.0 };
            (0.5 * (2.0 * PI * f * n as f64 / sr).sin()) as f32
        })
        .collect();
    let wave = Waveform::new(samples, cfg.sample_rate).expect("waveform");
    let mel = log_mel(&wave, &cfg).expect("log-mel");
    println!(
        "{} samples -> {} frames (expected {}), {} mel bands",
        wave.len(),
        mel.n_frames,
        frame_count(wave.len(), cfg.win_length(), cfg.hop),
        mel.n_mels
    );

    let (_, centres) = mel_filterbank(&cfg);
    for frame in [mel.n_frames / 4, 3 * mel.n_frames / 4] {
        let loudest = (0..mel.n_mels)
            .max_by(|&a, &b| mel.get(a, frame).total_cmp(&mel.get(b, frame)))
            .unwrap();
        println!("frame {frame}: loudest band {loudest} (centre ~{:.0} Hz)", centres[loudest]);
    }

    let norm = minmax_normalize(&mel, None).expect("normalise");
    let (lo, hi) = norm.min_max();
    println!("normalised range [{lo:.3}, {hi:.3}], state {:?}", norm.norm_state);

    let worst = (-100..=100)
        .map(|i| i as f64 / 100.0)
        .map(|x| (mulaw_decode(mulaw_encode(x, 256), 256) - x).abs())
        .fold(0.0, f64::max);
    println!("mu-law 256 round trip: worst error {worst:.4} on [-1, 1]");
}
