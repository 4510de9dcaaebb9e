//! Save a toy vocoder with its optimiser state and RNG position, reload it, and check that
//! the weights, the Adam moments and the random stream all resume exactly.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use textless::harness::{toy_config, Checkpoint, RngState};
use textless::models::{Vocoder, VocoderConfig};
use textless::nn::{Adam, AdamHyper, Module};

fn main() {
    let cfg = toy_config();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let vocoder = Vocoder::<f32>::new(&VocoderConfig::toy(32, 4), &mut rng).expect("vocoder");
    let adam = Adam::<f32>::new(AdamHyper::default());
    let _ = rng.random::<u64>();

    let mut ckpt = Checkpoint::new("vocoder", 0, &cfg);
    ckpt.capture_module(&vocoder, &adam);
    ckpt.rng.insert("data".into(), RngState::capture(&rng));
    let dir = tempfile::tempdir().expect("tempdir");
    let path = dir.path().join("vocoder.zvck");
    ckpt.save(&path).expect("save");
    let bytes = std::fs::metadata(&path).expect("stat").len();
    println!("wrote {} tensors, {bytes} bytes", ckpt.tensors.len());

    let loaded = Checkpoint::load(&path).expect("load");
    let mut fresh = Vocoder::<f32>::new(&VocoderConfig::toy(32, 4), &mut ChaCha8Rng::seed_from_u64(99)).expect("vocoder");
    let mut fresh_adam = Adam::<f32>::new(AdamHyper::default());
    loaded.restore_module(&mut fresh, &mut fresh_adam).expect("restore");
    let mut same = true;
    let mut originals = Vec::new();
    vocoder.visit_params(&mut |_, p| originals.push(p.data().to_vec()));
    let mut i = 0;
    fresh.visit_params(&mut |_, p| {
        same &= p.data() == originals[i].as_slice();
        i += 1;
    });
    println!("weights identical after reload: {same}");

    let mut resumed = loaded.rng["data"].restore().expect("rng");
    println!("next draw matches: {}", resumed.random::<u64>() == rng.random::<u64>());
    println!("re-encoded bytes identical: {}", loaded.to_bytes() == std::fs::read(&path).expect("read"));
}
