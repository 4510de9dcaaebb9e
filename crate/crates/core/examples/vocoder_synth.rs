//! Train the toy vocoder on ground-truth phone units with one-cycle, then resynthesise a
//! held-out utterance and compare log-Mel spectrograms with the original.
//!
//! `cargo run --release --example vocoder_synth -- [steps] [out.wav]`

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use textless::audio::{log_mel, minmax_normalize, save_wav, FeatureConfig, Split, Waveform};
use textless::metrics::{ls_mse, psnr};
use textless::models::{train_vocoder, vocoder_generate, Sampling, TrainConfig, Vocoder, VocoderConfig, VocoderCorpus, VocoderTrainer};
use textless::schedule::ScheduleConfig;
use textless::synthetic::{generate, phone_unit_items, SyntheticConfig};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let steps: u64 = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(400);
    let corpus = generate(&SyntheticConfig::default(), 7);
    let cfg = VocoderConfig::toy(9, 4);
    let spu = cfg.samples_per_unit();
    let train = VocoderCorpus::new(phone_unit_items(&corpus, Split::Train), spu, cfg.mu_channels).expect("train");
    let test = phone_unit_items(&corpus, Split::Test);

    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut trainer = VocoderTrainer::new(Vocoder::<f32>::new(&cfg, &mut rng).expect("vocoder"), 1.0);
    let mut tc = TrainConfig::new(8, 16);
    tc.log_every = steps.max(10) / 10;
    let log = train_vocoder(&mut trainer, &train, None, &ScheduleConfig::one_cycle(3e-2, steps), &tc, &mut rng, u64::MAX)
        .expect("training");
    for r in &log.records {
        println!("step {:4}  lr {:.2e}  nll {:.3}", r.step, r.lr, r.loss);
    }

    let item = &test[0];
    let synth = vocoder_generate(&trainer.vocoder, &item.units, item.speaker, Sampling::Temperature(1.0), 0).expect("synth");
    println!("{} units -> {} samples ({} per unit)", item.units.len(), synth.len(), spu);

    let feat = FeatureConfig::toy();
    let original = Waveform::new(item.audio[..synth.len()].to_vec(), cfg.sample_rate).expect("original");
    let mel = |w: &Waveform| minmax_normalize(&log_mel(w, &feat).expect("mel"), Some((-23.0, 3.0))).expect("norm");
    let (a, b) = (mel(&original), mel(&synth));
    println!("log-Mel LS-MSE {:.4}  PSNR {:.2} dB", ls_mse(&a, &b).unwrap(), psnr(&a, &b, 1.0).unwrap());

    if let Some(path) = args.get(2) {
        save_wav(path, &synth).expect("write wav");
        println!("wrote {path}");
    }
}
