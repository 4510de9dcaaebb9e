//! Acceptance suite: one test per criterion, each printing a single PASS/FAIL line.
//!
//! Run with `cargo test --release --test acceptance -- --nocapture --test-threads 1`.

use std::collections::BTreeSet;
use std::f64::consts::PI;
use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use textless::audio::{MelSpectrogram, NormState, Split};
use textless::harness::{run_pipeline, toy_config, Command, RunConfig, RunOptions, PRESETS};
use textless::metrics::{
    abx_error_with, bitrate, dtw_distance, edit_distance, psnr, ssim, AbxConfig, AbxItem, AbxMode, FrameMetric,
};
use textless::models::{
    encode, train_vocoder, vocoder_forward, vocoder_generate, Encoder, EncoderBatch, EncoderConfig, EncoderTrainer,
    Sampling, TrainConfig, Vocoder, VocoderConfig, VocoderCorpus, VocoderTrainer,
};
use textless::nn::gradcheck::{grad_check, LayerProbe};
use textless::schedule::{analyze_lrrt, lr_at, run_lr_range_test, LrrtConfig, ScheduleConfig, Trainable};
use textless::synthetic::{generate, pattern_codes, phone_unit_items, SyntheticConfig};
use textless::upsample::{upsample_fourier_pad, upsample_fourier_tile, validate_scale_chain, FeatureMap, ScaleChain};

// pinned tolerances
const DSP_TOL: f64 = 1e-9;
const DSP_TRIALS: usize = 1000;
const LRRT_FACTOR: f64 = 2.0;
const GRAD_TOL: f64 = 1e-6;
const LSTM_GRAD_TOL: f64 = 1e-5;
const INFONCE_REL_TOL: f64 = 0.10;
const CPC_CHANCE_MULTIPLE: f64 = 2.0;
const PSNR_TOL: f64 = 1e-9;
const SSIM_CONST_EXPECTED: f64 = 9.999e-5;
const SSIM_CONST_TOL: f64 = 1e-7;
const BITRATE_TOL: f64 = 1e-9;
const ABX_CHANCE_TOL: f64 = 3.0;
const ABX_MIN_TRIPLETS: usize = 10_000;

fn verdict(n: u32, name: &str, pass: bool, detail: &str) {
    println!("criterion {n:>2} {name}: {} ({detail})", if pass { "PASS" } else { "FAIL" });
}

fn max_abs(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[test]
fn criterion_01_dsp_identities() {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (mut tile_err, mut pad_err) = (0.0f64, 0.0f64);
    for _ in 0..DSP_TRIALS {
        let channels = rng.random_range(1..4);
        let len = rng.random_range(1..40);
        let s = rng.random_range(1..9);
        let values: Vec<f64> = (0..channels * len).map(|_| rng.random_range(-1.0..1.0)).collect();
        let f = FeatureMap::new(channels, len, values.clone()).unwrap();
        let mut zero_inserted = vec![0.0; channels * len * s];
        for c in 0..channels {
            for n in 0..len {
                zero_inserted[c * len * s + n * s] = values[c * len + n];
            }
        }
        tile_err = tile_err.max(max_abs(&upsample_fourier_tile(&f, s).unwrap().values, &zero_inserted));
        let padded = upsample_fourier_pad(&f, s).unwrap();
        for c in 0..channels {
            for n in 0..len {
                pad_err = pad_err.max((padded.values[c * len * s + n * s] - values[c * len + n]).abs());
            }
        }
    }
    let n = 16;
    let x: Vec<f64> = (0..n).map(|k| (2.0 * PI * k as f64 / 4.0).cos()).collect();
    let want: Vec<f64> = (0..2 * n).map(|k| (2.0 * PI * k as f64 / 8.0).cos()).collect();
    let got = upsample_fourier_pad(&FeatureMap::new(1, n, x).unwrap(), 2).unwrap();
    let cos_err = max_abs(&got.values, &want);
    let secs = started.elapsed().as_secs_f64();
    let pass = tile_err < DSP_TOL && pad_err < DSP_TOL && cos_err < DSP_TOL;
    verdict(
        1,
        "DSP identities",
        pass,
        &format!("{DSP_TRIALS} inputs: tile {tile_err:.1e}, pad {pad_err:.1e}, cos {cos_err:.1e}, tol {DSP_TOL:e}, {secs:.2}s"),
    );
    assert!(pass);
}

#[test]
fn criterion_02_scale_chain_presets() {
    let mut chains = BTreeSet::new();
    let mut failures = Vec::new();
    for name in PRESETS {
        match RunConfig::preset(name) {
            Ok(cfg) => {
                let c = cfg.vocoder.chain;
                if validate_scale_chain(&c).is_err() || cfg.validate().is_err() {
                    failures.push(name);
                }
                chains.insert((c.s1, c.s2, c.hop));
            }
            Err(_) => failures.push(name),
        }
    }
    let required = [(2, 160, 160), (16, 20, 160), (16, 16, 128), (10, 16, 80)];
    let missing: Vec<_> = required.iter().filter(|c| !chains.contains(c)).collect();
    let reuse_ok = ["tamil-best", "bengali-best"].iter().all(|p| {
        let c = RunConfig::preset(p).unwrap().vocoder.chain;
        (c.s1, c.s2, c.hop) == (10, 16, 80)
    });
    let bad = ScaleChain::new(16, 16, 160);
    let mut overrides = toml::Table::new();
    let mut voc = toml::Table::new();
    let mut chain = toml::Table::new();
    chain.insert("s1".into(), 16.into());
    chain.insert("s2".into(), 16.into());
    chain.insert("hop".into(), 160.into());
    voc.insert("chain".into(), chain.into());
    overrides.insert("vocoder".into(), voc.into());
    let base = RunConfig::preset("table2-row1").unwrap();
    let config_rejects = match RunConfig::from_table(base, overrides) {
        Err(e) => e.exit_code() == 2 && e.to_string().contains("chain"),
        Ok(_) => false,
    };
    let rejects = validate_scale_chain(&bad).is_err() && config_rejects;
    let pass = failures.is_empty() && missing.is_empty() && reuse_ok && rejects;
    verdict(
        2,
        "scale-chain presets",
        pass,
        &format!(
            "{} presets, {} distinct chains, invalid {failures:?}, missing {missing:?}, 16:16@160 rejected {rejects}",
            PRESETS.len(),
            chains.len()
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_03_scheduler_contracts() {
    let ms = ScheduleConfig::multistep_baseline();
    let flat = (0..50_000).all(|s| lr_at(&ms, s).unwrap() == 4e-4);
    let late = lr_at(&ms, 150_000).unwrap();
    let oclr = RunConfig::preset("table1-oclr-30k").unwrap().scheduler.vocoder;
    let curve: Vec<f64> = (0..=oclr.total_steps).map(|s| lr_at(&oclr, s).unwrap()).collect();
    let peak = curve.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let end = *curve.last().unwrap();
    // resuming at any step reproduces the uninterrupted sequence
    let resume_at = oclr.total_steps / 3;
    let resumed: Vec<f64> = (resume_at..=oclr.total_steps).map(|s| lr_at(&oclr, s).unwrap()).collect();
    let pure = resumed == curve[resume_at as usize..];
    let pass = flat && late == 1.25e-5 && peak == 4e-3 && end == oclr.final_lr && pure;
    verdict(
        3,
        "scheduler contracts",
        pass,
        &format!("4e-4 through 49999 {flat}, lr(150000) {late:e}, oclr max {peak:e}, end {end:e} vs final {:e}, resume-exact {pure}", oclr.final_lr),
    );
    assert!(pass);
}

/// Gradient descent on `½·λ·‖θ − x‖²` with fresh uniform noise `x` each step.
struct Quadratic {
    curvature: f64,
    theta: Vec<f64>,
}

impl Trainable for Quadratic {
    type Batch = Vec<f64>;

    fn train_step(&mut self, x: &Vec<f64>, lr: f64) -> f64 {
        let mut loss = 0.0;
        for (t, xi) in self.theta.iter_mut().zip(x) {
            let r = *t - xi;
            loss += 0.5 * self.curvature * r * r;
            *t -= lr * self.curvature * r;
        }
        loss
    }
}

#[test]
fn criterion_04_lrrt_stability_bound() {
    let started = Instant::now();
    let mut all = true;
    let mut cells = Vec::new();
    for curvature in [1.0, 10.0, 100.0] {
        for rate in [1usize, 5, 50] {
            let mut model = Quadratic { curvature, theta: vec![3.0; 8] };
            let cfg = LrrtConfig {
                start_lr: 1e-5,
                end_lr: 100.0,
                step_rate: rate,
                total_steps: 600 * rate,
                ..LrrtConfig::default()
            };
            let mut rng = ChaCha8Rng::seed_from_u64(7);
            let noise = std::iter::repeat_with(move || (0..8).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<f64>>());
            let report = run_lr_range_test(&mut model, noise, &cfg).unwrap();
            let bound = 2.0 / curvature;
            let ok = report
                .explosion_lr
                .is_some_and(|lr| lr > bound / LRRT_FACTOR && lr < bound * LRRT_FACTOR);
            all &= ok;
            cells.push(format!(
                "λ={curvature} r={rate}: {:.3e}/{bound:.3e}",
                report.explosion_lr.unwrap_or(f64::NAN)
            ));
        }
    }
    let secs = started.elapsed().as_secs_f64();
    verdict(
        4,
        "LRRT explosion vs 2/λ",
        all,
        &format!("factor {LRRT_FACTOR}; {}; {secs:.2}s", cells.join(", ")),
    );
    assert!(all);
}

#[test]
fn criterion_05_gradient_checks() {
    let started = Instant::now();
    let mut cells = Vec::new();
    let mut pass = true;
    let checks: [(&str, LayerProbe, f64); 5] = [
        ("linear", LayerProbe::linear(6, 4, 3, 1), GRAD_TOL),
        ("conv1d", LayerProbe::conv1d(3, 4, 11, 4, 2, 1, 2), GRAD_TOL),
        ("embedding", LayerProbe::embedding(7, 4, &[0, 3, 3, 6, 1], 3), GRAD_TOL),
        ("softmax-xent", LayerProbe::softmax_xent(4, 6, 4), GRAD_TOL),
        ("lstm 5-step bptt", LayerProbe::lstm(3, 5, 2, 5, 5), LSTM_GRAD_TOL),
    ];
    for (name, mut probe, tol) in checks {
        let err = grad_check(&mut probe, 1e-6, usize::MAX, 0);
        pass &= err < tol;
        cells.push(format!("{name} {err:.1e}<{tol:e}"));
    }
    let secs = started.elapsed().as_secs_f64();
    verdict(5, "gradient checks", pass, &format!("{}; {secs:.2}s", cells.join(", ")));
    assert!(pass);
}

#[test]
fn criterion_06_vq_cpc_sanity() {
    let started = Instant::now();
    let cfg = EncoderConfig::toy(20);
    let ln = ((cfg.negatives + 1) as f64).ln();
    let chance = 1.0 / (cfg.negatives + 1) as f64;

    // untrained: full mel path on random input
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut enc = Encoder::<f64>::new(&cfg, &mut rng).unwrap();
    let mels: Vec<MelSpectrogram> = (0..8)
        .map(|_| {
            let v = (0..20 * 64).map(|_| rng.random_range(0.0..1.0)).collect();
            MelSpectrogram::new(20, 64, v, "random", NormState::MinMax { min: 0.0, max: 1.0 })
        })
        .collect();
    let batch = EncoderBatch::sample(&mels, 8, 32, &mut rng).unwrap();
    let untrained = enc.loss_and_grads(&batch.tensor::<f64>(), &mut rng).unwrap().infonce;
    let untrained_ok = ((untrained - ln) / ln).abs() < INFONCE_REL_TOL;

    // trained: 500 steps on repeating unit patterns
    let seed = 0;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let enc = Encoder::<f32>::new(&cfg, &mut rng).unwrap();
    let mut trainer = EncoderTrainer::new(enc, 1.0, ChaCha8Rng::seed_from_u64(seed + 1));
    let sched = ScheduleConfig::one_cycle(3e-2, 500);
    let (b, t, period) = (8, 16, 4);
    for step in 0..500 {
        let codes = pattern_codes(b, t, cfg.codebook_size, period, &mut rng);
        trainer.step_on_codes(&codes, b, t, lr_at(&sched, step).unwrap()).unwrap();
    }
    let mut acc = 0.0;
    let evals = 20;
    for _ in 0..evals {
        let codes = pattern_codes(b, t, cfg.codebook_size, period, &mut rng);
        let out = trainer.encoder.code_loss_and_grads(&codes, b, t, &mut rng).unwrap();
        acc += out.accuracy.iter().sum::<f64>() / out.accuracy.len() as f64;
    }
    acc /= evals as f64;
    let trained_ok = acc > CPC_CHANCE_MULTIPLE * chance;
    let secs = started.elapsed().as_secs_f64();
    let pass = untrained_ok && trained_ok;
    verdict(
        6,
        "VQ/CPC sanity",
        pass,
        &format!(
            "untrained InfoNCE {untrained:.4} vs ln17 {ln:.4} (±{:.0}%), accuracy after 500 steps {acc:.4} vs {CPC_CHANCE_MULTIPLE}×chance {:.4}, {secs:.1}s",
            INFONCE_REL_TOL * 100.0,
            CPC_CHANCE_MULTIPLE * chance
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_07_oclr_vs_multistep() {
    let started = Instant::now();
    let corpus = generate(&SyntheticConfig::default(), 7);
    let cfg = VocoderConfig::toy(9, 4);
    let chain = cfg.chain;
    let spu = cfg.samples_per_unit();
    let train = VocoderCorpus::new(phone_unit_items(&corpus, Split::Train), spu, cfg.mu_channels).unwrap();
    let val = VocoderCorpus::new(phone_unit_items(&corpus, Split::Val), spu, cfg.mu_channels).unwrap();

    // peak rate from a range test on the same model
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut probe = VocoderTrainer::new(Vocoder::<f32>::new(&cfg, &mut rng).unwrap(), 1.0);
    let batches: Vec<_> = (0..300).map(|_| train.sample_batch(8, 8, &mut rng).unwrap()).collect();
    let lrrt = LrrtConfig { start_lr: 1e-5, end_lr: 1.0, step_rate: 5, total_steps: 300, ..LrrtConfig::default() };
    let peak = analyze_lrrt(&run_lr_range_test(&mut probe, batches, &lrrt).unwrap()).unwrap();

    let budget = 1500u64;
    let oclr_steps = budget * 3 / 10;
    let schedules = [
        ScheduleConfig::multistep_scaled(budget, 4e-4),
        ScheduleConfig::one_cycle(peak, oclr_steps),
    ];
    let tc = TrainConfig { log_every: 1000, ..TrainConfig::new(8, 16) };
    let mut finals = [Vec::new(), Vec::new()];
    for seed in 0..3u64 {
        for (k, sched) in schedules.iter().enumerate() {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut tr = VocoderTrainer::new(Vocoder::<f32>::new(&cfg, &mut rng).unwrap(), 1.0);
            let log = train_vocoder(&mut tr, &train, Some(&val), sched, &tc, &mut rng, u64::MAX).unwrap();
            finals[k].push(log.final_val_nll.unwrap());
        }
    }
    let median = |v: &mut Vec<f64>| {
        v.sort_by(f64::total_cmp);
        v[v.len() / 2]
    };
    let (ms, oc) = (median(&mut finals[0].clone()), median(&mut finals[1].clone()));
    let pass = oc <= ms;
    let secs = started.elapsed().as_secs_f64();
    verdict(
        7,
        "OCLR at 30% budget vs multistep",
        pass,
        &format!(
            "chain {}:{} hop {}, multistep {budget} steps median val NLL {ms:.4} {:?}, OCLR {oclr_steps} steps (peak {peak:.3e}) median {oc:.4} {:?}, {secs:.0}s",
            chain.s1, chain.s2, chain.hop, finals[0], finals[1]
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_08_geometry() {
    let started = Instant::now();
    let mut failures = Vec::new();
    for name in PRESETS {
        let run = RunConfig::preset(name).unwrap();
        let mut vc = run.vocoder.clone();
        // widths do not affect timing; shrink so every preset synthesises quickly
        vc.code_dim = 4;
        vc.speaker_dim = 2;
        vc.frame_hidden = 4;
        vc.mu_dim = 4;
        vc.sample_hidden = 6;
        vc.fc_dim = 8;
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut voc = Vocoder::<f64>::new(&vc, &mut rng).unwrap();
        let hop = run.features.hop;
        for n_units in [1usize, 3] {
            let units: Vec<usize> = (0..n_units).map(|i| i % vc.n_codes).collect();
            let wav = vocoder_generate(&voc, &units, 0, Sampling::Argmax, 0).unwrap();
            if wav.len() != n_units * 2 * hop {
                failures.push(format!("{name}: {n_units} units -> {} samples", wav.len()));
            }
        }
        if name == "best-en" {
            // 102 frames -> 51 units -> 8160 samples
            let units = vec![0usize; Encoder::<f64>::output_len(run.train.vocoder.frames)];
            let teacher = vec![128usize; units.len() * 2 * hop];
            let rows = vocoder_forward(&mut voc, &units, 0, &teacher).unwrap().shape()[0];
            if units.len() != 51 || rows != 8160 {
                failures.push(format!("best-en: {} units, {rows} rows", units.len()));
            }
        }
    }
    // one full-width synthesis
    let wide = RunConfig::preset("table2-row1").unwrap();
    let voc = Vocoder::<f32>::new(&wide.vocoder, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
    let full = vocoder_generate(&voc, &[5], 0, Sampling::Argmax, 0).unwrap().len();
    if full != 2 * wide.features.hop {
        failures.push(format!("full-width table2-row1: {full} samples"));
    }
    // bookkeeping on random lengths through the toy encoder and vocoder
    let toy = toy_config();
    let enc = Encoder::<f64>::new(&toy.encoder, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
    let voc = Vocoder::<f64>::new(&toy.vocoder, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..25 {
        let frames = rng.random_range(2..60);
        let v = (0..toy.features.n_mels * frames).map(|_| rng.random_range(0.0..1.0)).collect();
        let mel = MelSpectrogram::new(toy.features.n_mels, frames, v, "r", NormState::MinMax { min: 0.0, max: 1.0 });
        let (_, units) = encode(&enc, &mel).unwrap();
        let wav = vocoder_generate(&voc, &units, 0, Sampling::Temperature(1.0), 9).unwrap();
        let (s1, s2) = (toy.vocoder.chain.s1, toy.vocoder.chain.s2);
        if units.len() != frames / 2 || wav.len() != (frames / 2) * s1 * s2 || wav.len() != (frames / 2) * 2 * toy.features.hop {
            failures.push(format!("toy: {frames} frames -> {} units -> {} samples", units.len(), wav.len()));
        }
    }
    let secs = started.elapsed().as_secs_f64();
    let pass = failures.is_empty();
    verdict(
        8,
        "geometry end-to-end",
        pass,
        &format!("{} presets + 25 random toy lengths, failures {failures:?}, {secs:.2}s", PRESETS.len()),
    );
    assert!(pass);
}

fn grid(m: usize, t: usize, v: Vec<f64>) -> MelSpectrogram {
    MelSpectrogram::new(m, t, v, "g", NormState::MinMax { min: 0.0, max: 1.0 })
}

/// Count valid within-speaker triplets independently of the metric implementation.
fn count_within(items: &[AbxItem]) -> usize {
    let mut n = 0;
    for (xi, x) in items.iter().enumerate() {
        for (ai, a) in items.iter().enumerate() {
            if ai == xi || a.category != x.category || a.speaker != x.speaker {
                continue;
            }
            n += items.iter().filter(|b| b.category != x.category && b.speaker == a.speaker).count();
        }
    }
    n
}

#[test]
fn criterion_09_metrics() {
    let started = Instant::now();
    let mut checks: Vec<(String, bool)> = Vec::new();
    let (m, t) = (10, 12);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let a: Vec<f64> = (0..m * t).map(|_| rng.random_range(0.0..0.9)).collect();
    let b: Vec<f64> = a.iter().map(|v| v + 0.1).collect();
    let p = psnr(&grid(m, t, a.clone()), &grid(m, t, b), 1.0).unwrap();
    checks.push((format!("psnr {p:.12}"), (p - 20.0).abs() < PSNR_TOL));
    let s_id = ssim(&grid(m, t, a.clone()), &grid(m, t, a.clone())).unwrap();
    checks.push((format!("ssim identity {s_id}"), s_id == 1.0));
    let s_c = ssim(&grid(m, t, vec![0.0; m * t]), &grid(m, t, vec![1.0; m * t])).unwrap();
    checks.push((format!("ssim const {s_c:.6e}"), (s_c - SSIM_CONST_EXPECTED).abs() < SSIM_CONST_TOL));
    let k: Vec<char> = "kitten".chars().collect();
    let s: Vec<char> = "sitting".chars().collect();
    let ed = edit_distance(&k, &s);
    checks.push((format!("kitten/sitting {ed}"), ed == 3));
    let uniform: Vec<usize> = (0..200).map(|i| i % 4).collect();
    let br = bitrate(&[uniform], 2.0, false).unwrap();
    checks.push((format!("bitrate {br}"), (br - 200.0).abs() < BITRATE_TOL));
    let d1 = dtw_distance(&[1.0], &[2.0], 1, FrameMetric::Abs);
    let d2 = dtw_distance(&[0.0, 1.0], &[0.0, 0.0, 1.0, 1.0], 1, FrameMetric::Abs);
    let d3 = dtw_distance(&[0.0, 2.0], &[0.0, 2.0], 1, FrameMetric::Euclidean);
    checks.push((format!("dtw {d1} {d2} {d3}"), d1 == 1.0 && d2 == 0.0 && d3 == 0.0));

    // separable clusters
    let mut sep = Vec::new();
    for spk in ["s1", "s2"] {
        for (ci, cat) in ["a", "b", "c"].iter().enumerate() {
            for _ in 0..5 {
                let f = (0..3 * 2).map(|i| if i % 2 == 0 { ci as f64 * 10.0 } else { 1.0 } + rng.random_range(0.0..0.1)).collect();
                sep.push(AbxItem { features: f, dim: 2, category: cat.to_string(), speaker: spk.to_string() });
            }
        }
    }
    let cfg = AbxConfig::default();
    let e_sep = abx_error_with(&sep, AbxMode::Within, &cfg).unwrap();
    let e_sep_x = abx_error_with(&sep, AbxMode::Across, &cfg).unwrap();
    checks.push((format!("abx separable {e_sep}/{e_sep_x}"), e_sep == 0.0 && e_sep_x == 0.0));

    // identical distributions: category labels carry no information
    let mut same = Vec::new();
    for spk in ["s1", "s2"] {
        for cat in ["a", "b", "c"] {
            for _ in 0..30 {
                let frames = rng.random_range(3..6);
                let f = (0..frames * 3).map(|_| rng.random_range(-1.0..1.0)).collect();
                same.push(AbxItem { features: f, dim: 3, category: cat.to_string(), speaker: spk.to_string() });
            }
        }
    }
    let available = count_within(&same);
    let mc = AbxConfig { max_triplets: ABX_MIN_TRIPLETS, seed: 3, ..AbxConfig::default() };
    let e_same = abx_error_with(&same, AbxMode::Within, &mc).unwrap();
    checks.push((
        format!("abx identical {e_same:.2}% over {ABX_MIN_TRIPLETS} of {available} triplets"),
        available >= ABX_MIN_TRIPLETS && (e_same - 50.0).abs() <= ABX_CHANCE_TOL,
    ));

    let secs = started.elapsed().as_secs_f64();
    let pass = checks.iter().all(|(_, ok)| *ok);
    let failed: Vec<&String> = checks.iter().filter(|(_, ok)| !ok).map(|(s, _)| s).collect();
    let detail = checks.iter().map(|(s, _)| s.as_str()).collect::<Vec<_>>().join("; ");
    verdict(9, "metric oracles", pass, &format!("{detail}; failed {failed:?}; {secs:.1}s"));
    assert!(pass);
}

fn small_run_config() -> RunConfig {
    let mut cfg = toy_config();
    cfg.threads = 1;
    cfg.scheduler.encoder = ScheduleConfig::one_cycle(1e-2, 40);
    cfg.scheduler.vocoder = ScheduleConfig::one_cycle(3e-2, 30);
    cfg.scheduler.lrrt.total_steps = 60;
    cfg.validate().unwrap();
    cfg
}

fn run_all(cfg: &RunConfig, dir: &Path) {
    let mut opts = RunOptions::new(dir);
    opts.max_items = Some(2);
    for cmd in [
        Command::Prep,
        Command::TrainEncoder,
        Command::Encode,
        Command::Lrrt,
        Command::TrainVocoder,
        Command::Synth,
        Command::EvalUnits,
        Command::EvalAudio,
        Command::EvalText,
    ] {
        run_pipeline(cmd, cfg, &opts).unwrap_or_else(|e| panic!("{cmd}: {e}"));
    }
}

#[test]
fn criterion_10_reproducibility() {
    let started = Instant::now();
    let cfg = small_run_config();
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let (d1, d2) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    pool.install(|| {
        run_all(&cfg, d1.path());
        run_all(&cfg, d2.path());
    });
    let files = [
        "encoder/checkpoint.zvck",
        "vocoder/checkpoint.zvck",
        "encoder/train_log.csv",
        "vocoder/train_log.csv",
        "lrrt/lrrt.csv",
        "units/units.jsonl",
        "eval/units.csv",
        "eval/audio.csv",
        "eval/text.csv",
    ];
    let mut differing = Vec::new();
    for f in files {
        let (a, b) = (std::fs::read(d1.path().join(f)).unwrap(), std::fs::read(d2.path().join(f)).unwrap());
        if a != b || a.is_empty() {
            differing.push(f);
        }
    }
    let secs = started.elapsed().as_secs_f64();
    let pass = differing.is_empty();
    verdict(
        10,
        "reproducibility",
        pass,
        &format!("{} artifacts compared byte-for-byte, differing {differing:?}, {secs:.1}s", files.len()),
    );
    assert!(pass);
}
