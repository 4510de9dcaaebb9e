//! Toy vocoder trained twice on ground-truth phone units: the scaled multistep recipe over the
//! full budget, then one-cycle over 30% of it. Prints validation NLL at checkpoints.
//!
//! `cargo run --release --example schedule_race -- [budget] [seed] [oclr_peak] [cycle_fraction] [oclr_only]`

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use textless::audio::Split;
use textless::models::{train_vocoder, TrainConfig, Vocoder, VocoderConfig, VocoderCorpus, VocoderTrainer};
use textless::schedule::ScheduleConfig;
use textless::synthetic::{generate, phone_unit_items, SyntheticConfig};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let budget: u64 = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(1000);
    let seed: u64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(0);
    let max_lr: f64 = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(3.6e-2);
    let cf: f64 = args.get(4).and_then(|s| s.parse().ok()).unwrap_or(0.3);
    let only_oclr = args.get(5).is_some();
    let corpus = generate(&SyntheticConfig::default(), 7);
    let cfg = VocoderConfig::toy(9, 4);
    let train = VocoderCorpus::new(phone_unit_items(&corpus, Split::Train), 32, 256).unwrap();
    let val = VocoderCorpus::new(phone_unit_items(&corpus, Split::Val), 32, 256).unwrap();
    let mut tc = TrainConfig::new(8, 16);
    tc.log_every = 100;
    tc.val_every = budget / 5;
    for (name, sched) in [
        ("multistep", ScheduleConfig::multistep_scaled(budget, 4e-4)),
        ("oclr", ScheduleConfig { cycle_fraction: cf, ..ScheduleConfig::one_cycle(max_lr, (budget as f64 * 0.3) as u64) }),
    ] {
        if only_oclr && name == "multistep" {
            continue;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let v = Vocoder::<f32>::new(&cfg, &mut rng).unwrap();
        let mut tr = VocoderTrainer::new(v, 1.0);
        let log = train_vocoder(&mut tr, &train, Some(&val), &sched, &tc, &mut rng, u64::MAX).unwrap();
        for r in log.records.iter().filter(|r| r.val_nll.is_some()) {
            println!("{name} step {} lr {:.2e} loss {:.4} val {:.4}", r.step, r.lr, r.loss, r.val_nll.unwrap());
        }
        println!("{name}: final val {:.4} in {:.1}s", log.final_val_nll.unwrap(), log.wall_secs);
    }
}
