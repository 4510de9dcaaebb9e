//! Train the encoder's context network and predictors on repeating unit patterns and
//! report InfoNCE loss and prediction accuracy against the 1/(negatives+1) chance level.
//!
//! `cargo run --release --example cpc_patterns -- [period] [lr] [seed] [steps]`

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use textless::models::{Encoder, EncoderConfig, EncoderTrainer};
use textless::schedule::{lr_at, ScheduleConfig};
use textless::synthetic::pattern_codes;

fn main() {
    let a: Vec<String> = std::env::args().collect();
    let arg = |i: usize, d: &str| a.get(i).cloned().unwrap_or_else(|| d.to_string());
    let period: usize = arg(1, "4").parse().expect("period");
    let lr: f64 = arg(2, "1e-2").parse().expect("lr");
    let seed: u64 = arg(3, "0").parse().expect("seed");
    let steps: u64 = arg(4, "500").parse().expect("steps");

    let cfg = EncoderConfig::toy(20);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let enc = Encoder::<f32>::new(&cfg, &mut rng).expect("encoder");
    let mut tr = EncoderTrainer::new(enc, 1.0, ChaCha8Rng::seed_from_u64(seed + 1));
    let sched = ScheduleConfig::one_cycle(lr, steps);
    let (batch, time) = (8, 16);
    let chance = 1.0 / (cfg.negatives + 1) as f64;
    println!("chance {chance:.4}");
    for step in 0..steps {
        let codes = pattern_codes(batch, time, cfg.codebook_size, period, &mut rng);
        let (loss, acc, _) = tr.step_on_codes(&codes, batch, time, lr_at(&sched, step).expect("lr")).expect("step");
        if step % 50 == 0 || step + 1 == steps {
            println!("step {step:4}  loss {loss:.4}  acc {acc:.4}");
        }
    }
    let mut acc = 0.0;
    for _ in 0..20 {
        let codes = pattern_codes(batch, time, cfg.codebook_size, period, &mut rng);
        acc += tr.encoder.code_loss_and_grads(&codes, batch, time, &mut rng).expect("eval").accuracy.iter().sum::<f64>() / cfg.horizon as f64;
    }
    println!("held-out accuracy {:.4} ({:.1}x chance)", acc / 20.0, acc / 20.0 / chance);
}
