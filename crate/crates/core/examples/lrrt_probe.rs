//! LR range test on the toy vocoder: exponential sweep 1e-5 → 1, one LR increment every
//! `step_rate` steps. Prints raw and smoothed loss per record and the suggested peak.
//!
//! `cargo run --release --example lrrt_probe -- [step_rate] [total_steps]`

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use textless::audio::Split;
use textless::models::{Vocoder, VocoderConfig, VocoderCorpus, VocoderTrainer};
use textless::schedule::{analyze_lrrt, run_lr_range_test, LrrtConfig};
use textless::synthetic::{generate, phone_unit_items, SyntheticConfig};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let rate: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(5);
    let total: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(300);
    let corpus = generate(&SyntheticConfig::default(), 7);
    let train = VocoderCorpus::new(phone_unit_items(&corpus, Split::Train), 32, 256).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let v = Vocoder::<f32>::new(&VocoderConfig::toy(9, 4), &mut rng).unwrap();
    let mut tr = VocoderTrainer::new(v, 1.0);
    let batches: Vec<_> = (0..total).map(|_| train.sample_batch(8, 8, &mut rng).unwrap()).collect();
    let cfg = LrrtConfig { start_lr: 1e-5, end_lr: 1.0, step_rate: rate, total_steps: total, ..LrrtConfig::default() };
    let rep = run_lr_range_test(&mut tr, batches, &cfg).unwrap();
    for r in &rep.records {
        println!("{} {:.3e} {:.4} {:.4}", r.step, r.lr, r.raw_loss, r.smoothed_loss);
    }
    println!("suggested {:?} explosion {:?}", analyze_lrrt(&rep), rep.explosion_lr);
}
