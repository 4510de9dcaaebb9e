//! Text, spectrogram, bitrate and DTW metrics on small hand-made inputs.

use textless::audio::{MelSpectrogram, NormState};
use textless::metrics::{
    bitrate, corpus_error_rate, dtw_distance, error_rate, psnr, ssim, ls_mse, utterance_mean_error_rate, FrameMetric,
    TokenUnit,
};

fn main() {
    let refs = ["the cat sat", "a dog ran far away"];
    let hyps = ["the bat sat", "a dog ran away"];
    for (r, h) in refs.iter().zip(&hyps) {
        println!(
            "{r:?} vs {h:?}: CER {:.2}%  WER {:.2}%",
            error_rate(r, h, TokenUnit::Char).unwrap(),
            error_rate(r, h, TokenUnit::Word).unwrap()
        );
    }
    let pairs: Vec<(&str, &str)> = refs.iter().copied().zip(hyps.iter().copied()).collect();
    println!(
        "corpus WER pooled {:.2}%  per-utterance mean {:.2}%",
        corpus_error_rate(&pairs, TokenUnit::Word).unwrap(),
        utterance_mean_error_rate(&pairs, TokenUnit::Word).unwrap()
    );

    let (m, t) = (8, 12);
    let a: Vec<f64> = (0..m * t).map(|i| ((i * 7 % 13) as f64) / 13.0).collect();
    let b: Vec<f64> = a.iter().map(|v| (v + 0.05).min(1.0)).collect();
    let grid = |v: Vec<f64>| MelSpectrogram::new(m, t, v, "demo", NormState::MinMax { min: 0.0, max: 1.0 });
    let (a, b) = (grid(a), grid(b));
    println!(
        "spectrogram: LS-MSE {:.4}  PSNR {:.2} dB  SSIM {:.4}",
        ls_mse(&a, &b).unwrap(),
        psnr(&a, &b, 1.0).unwrap(),
        ssim(&a, &b).unwrap()
    );

    let units = vec![vec![0, 1, 2, 3, 0, 1, 2, 3], vec![5, 5, 5, 6, 6, 6]];
    println!(
        "bitrate over 0.5 s: {:.1} bits/s (runs collapsed: {:.1})",
        bitrate(&units, 0.5, false).unwrap(),
        bitrate(&units, 0.5, true).unwrap()
    );

    let x = [0.0, 1.0, 2.0, 1.0];
    let y = [0.0, 0.0, 1.0, 2.0, 2.0, 1.0];
    println!("DTW |x-y| along the best path: {:.3}", dtw_distance(&x, &y, 1, FrameMetric::Abs));
}
