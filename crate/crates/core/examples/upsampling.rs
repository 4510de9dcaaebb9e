//! The four time-axis upsamplers on a band-limited feature map, their reconstruction error
//! against the densely sampled signal, and the scale-chain rule `s1 · s2 = 2 · hop`.

use std::f64::consts::PI;

use textless::upsample::{validate_scale_chain, FeatureMap, ScaleChain, Upsampler};

fn main() {
    let (len, s) = (16usize, 4usize);
    let signal = |t: f64| (2.0 * PI * t / len as f64).sin() + 0.5 * (2.0 * PI * 3.0 * t / len as f64).cos();
    let coarse = FeatureMap::new(1, len, (0..len).map(|n| signal(n as f64)).collect()).unwrap();
    let dense: Vec<f64> = (0..len * s).map(|n| signal(n as f64 / s as f64)).collect();

    for op in Upsampler::ALL {
        let up = op.apply(&coarse, s).expect("upsample");
        let rmse = (up.values.iter().zip(&dense).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / dense.len() as f64).sqrt();
        let head: Vec<String> = up.values[..6].iter().map(|v| format!("{v:+.2}")).collect();
        println!("{:<12} len {}  rmse vs dense {rmse:.4}  head [{}]", format!("{op:?}"), up.len, head.join(" "));
    }

    for (s1, s2, hop) in [(2, 160, 160), (16, 20, 160), (16, 16, 128), (10, 16, 80), (16, 16, 160)] {
        let chain = ScaleChain::new(s1, s2, hop);
        match validate_scale_chain(&chain) {
            Ok(()) => println!("chain {s1}:{s2} hop {hop}: ok"),
            Err(e) => println!("chain {s1}:{s2} hop {hop}: {e}"),
        }
    }
}
