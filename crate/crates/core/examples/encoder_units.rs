//! Train the VQ-CPC encoder briefly on the synthetic tone corpus, encode the test split into
//! discrete units, and report unit bitrate and how units line up with the true phones.
//!
//! `cargo run --release --example encoder_units -- [steps]`

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use textless::audio::{log_mel, minmax_normalize, FeatureConfig, Split};
use textless::metrics::bitrate;
use textless::models::{encode, train_encoder, Encoder, EncoderConfig, EncoderTrainer, TrainConfig};
use textless::schedule::ScheduleConfig;
use textless::synthetic::{generate, SyntheticConfig};

fn main() {
    let steps: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(200);
    let corpus = generate(&SyntheticConfig::default(), 7);
    let feat = FeatureConfig::toy();
    let mels: Vec<_> = corpus
        .iter()
        .map(|u| minmax_normalize(&log_mel(&u.wave, &feat).expect("mel"), Some((-23.0, 3.0))).expect("norm"))
        .collect();
    let train: Vec<_> = corpus.iter().zip(&mels).filter(|(u, _)| u.split == Split::Train).map(|(_, m)| m.clone()).collect();

    let cfg = EncoderConfig::toy(feat.n_mels);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let enc = Encoder::<f32>::new(&cfg, &mut rng).expect("encoder");
    let mut trainer = EncoderTrainer::new(enc, 1.0, ChaCha8Rng::seed_from_u64(1));
    let mut tc = TrainConfig::new(8, 32);
    tc.log_every = steps.max(5) / 5;
    let log = train_encoder(&mut trainer, &train, &ScheduleConfig::one_cycle(1e-2, steps), &tc, &mut rng, u64::MAX)
        .expect("training");
    for r in &log.records {
        println!("step {:4}  loss {:.3}  acc {:.3}", r.step, r.loss, r.accuracy.unwrap_or(f64::NAN));
    }

    let mut sequences = Vec::new();
    let mut duration = 0.0;
    // (phone, unit) co-occurrence over aligned positions
    let mut joint: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    for (u, m) in corpus.iter().zip(&mels).filter(|(u, _)| u.split == Split::Test) {
        let (_, units) = encode(&trainer.encoder, m).expect("encode");
        for (p, k) in u.phones.iter().zip(&units) {
            *joint.entry((*p, *k)).or_default() += 1;
        }
        duration += u.wave.duration_secs();
        sequences.push(units);
    }
    let used: std::collections::BTreeSet<usize> = sequences.iter().flatten().copied().collect();
    println!("{} test utterances, {} distinct units of {}", sequences.len(), used.len(), cfg.codebook_size);
    println!("bitrate {:.1} bits/s", bitrate(&sequences, duration, false).expect("bitrate"));
    println!("first utterance: {:?}", &sequences[0][..sequences[0].len().min(24)]);
    let total: usize = joint.values().sum();
    let mut best: BTreeMap<usize, usize> = BTreeMap::new();
    for (&(p, _), &n) in &joint {
        let e = best.entry(p).or_default();
        *e = (*e).max(n);
    }
    println!("phone purity of the majority unit: {:.3}", best.values().sum::<usize>() as f64 / total as f64);
}
