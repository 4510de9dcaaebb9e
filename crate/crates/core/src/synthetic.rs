//! A deterministic multi-speaker toy corpus: "phones" are pairs of steady tones,
//! speakers scale every frequency by a pitch factor, and words are separated by silence.
//! Also a nearest-centroid frame classifier that stands in for an ASR system.

use std::f64::consts::PI;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::audio::{save_wav, AudioError, ManifestEntry, MelSpectrogram, Split, Waveform};

/// Tone pairs (Hz) for phones 1..=8; phone 0 is silence.
pub const PHONE_TONES: [(f64, f64); 8] = [
    (180.0, 800.0),
    (180.0, 1150.0),
    (180.0, 1600.0),
    (320.0, 800.0),
    (320.0, 1150.0),
    (320.0, 1600.0),
    (560.0, 800.0),
    (560.0, 1600.0),
];

pub const PHONE_LETTERS: [char; 9] = [' ', 'a', 'b', 'd', 'e', 'g', 'i', 'k', 'o'];

pub const SILENCE: usize = 0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticConfig {
    pub sample_rate: u32,
    /// Samples per unit label (`2·hop` of the matching feature geometry).
    pub unit_samples: usize,
    pub pitch_factors: Vec<f64>,
    pub utterances_per_speaker: usize,
    pub vocabulary: usize,
    pub words_per_utterance: (usize, usize),
    pub phone_units: (usize, usize),
    pub gap_units: (usize, usize),
    pub noise: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            sample_rate: 4000,
            unit_samples: 32,
            pitch_factors: vec![0.88, 0.96, 1.04, 1.12],
            utterances_per_speaker: 12,
            vocabulary: 12,
            words_per_utterance: (3, 4),
            phone_units: (4, 7),
            gap_units: (2, 4),
            noise: 0.003,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticUtterance {
    pub id: String,
    pub speaker: String,
    pub speaker_index: usize,
    pub wave: Waveform,
    /// Phone label of every unit-length block of samples.
    pub phones: Vec<usize>,
    pub transcript: String,
    pub split: Split,
}

fn split_of(index: usize) -> Split {
    match index % 6 {
        4 => Split::Val,
        5 => Split::Test,
        _ => Split::Train,
    }
}

fn make_vocabulary(cfg: &SyntheticConfig, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut words = Vec::with_capacity(cfg.vocabulary);
    while words.len() < cfg.vocabulary {
        let len = rng.random_range(2..=3);
        let mut w: Vec<usize> = Vec::with_capacity(len);
        while w.len() < len {
            let p = rng.random_range(1..=PHONE_TONES.len());
            if w.last() != Some(&p) {
                w.push(p);
            }
        }
        if !words.contains(&w) {
            words.push(w);
        }
    }
    words
}

fn spell(word: &[usize]) -> String {
    word.iter().map(|&p| PHONE_LETTERS[p]).collect()
}

fn render(phones: &[usize], factor: f64, cfg: &SyntheticConfig, rng: &mut ChaCha8Rng) -> Vec<f32> {
    let sr = cfg.sample_rate as f64;
    let us = cfg.unit_samples;
    let ramp = (0.005 * sr) as usize;
    let mut out = Vec::with_capacity(phones.len() * us);
    let mut i = 0;
    while i < phones.len() {
        let p = phones[i];
        let run = phones[i..].iter().take_while(|&&q| q == p).count();
        let len = run * us;
        for n in 0..len {
            let mut v = 0.0;
            if p != SILENCE {
                let (f1, f2) = PHONE_TONES[p - 1];
                let t = n as f64 / sr;
                let env = (n.min(len - 1 - n) as f64 / ramp as f64).min(1.0);
                v = env * (0.35 * (2.0 * PI * f1 * factor * t).sin() + 0.25 * (2.0 * PI * f2 * factor * t).sin());
            }
            v += cfg.noise * rng.random_range(-1.0..1.0);
            out.push(v as f32);
        }
        i += run;
    }
    out
}

/// Generate the corpus. Identical `(cfg, seed)` gives bit-identical audio.
pub fn generate(cfg: &SyntheticConfig, seed: u64) -> Vec<SyntheticUtterance> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let vocab = make_vocabulary(cfg, &mut rng);
    let mut out = Vec::new();
    for (s, &factor) in cfg.pitch_factors.iter().enumerate() {
        for u in 0..cfg.utterances_per_speaker {
            let n_words = rng.random_range(cfg.words_per_utterance.0..=cfg.words_per_utterance.1);
            let mut order: Vec<usize> = (0..vocab.len()).collect();
            order.shuffle(&mut rng);
            let words: Vec<&Vec<usize>> = order[..n_words].iter().map(|&w| &vocab[w]).collect();
            let mut phones = vec![SILENCE; 3];
            for (wi, w) in words.iter().enumerate() {
                if wi > 0 {
                    let gap = rng.random_range(cfg.gap_units.0..=cfg.gap_units.1);
                    phones.extend(std::iter::repeat_n(SILENCE, gap));
                }
                for &p in w.iter() {
                    let d = rng.random_range(cfg.phone_units.0..=cfg.phone_units.1);
                    phones.extend(std::iter::repeat_n(p, d));
                }
            }
            phones.extend([SILENCE; 3]);
            let samples = render(&phones, factor, cfg, &mut rng);
            let transcript = words.iter().map(|w| spell(w)).collect::<Vec<_>>().join(" ");
            out.push(SyntheticUtterance {
                id: format!("spk{s}_utt{u:03}"),
                speaker: format!("spk{s}"),
                speaker_index: s,
                wave: Waveform::new(samples, cfg.sample_rate).expect("finite synthetic audio"),
                phones,
                transcript,
                split: split_of(u),
            });
        }
    }
    out
}

/// Write every utterance as a WAV file plus a `manifest.jsonl` and a `phones.jsonl`
/// with the ground-truth unit labels.
pub fn write_dataset(dir: &Path, corpus: &[SyntheticUtterance]) -> Result<Vec<ManifestEntry>, AudioError> {
    std::fs::create_dir_all(dir.join("wav"))?;
    let mut entries = Vec::with_capacity(corpus.len());
    let mut labels = Vec::new();
    for u in corpus {
        let rel = format!("wav/{}.wav", u.id);
        save_wav(dir.join(&rel), &u.wave)?;
        entries.push(ManifestEntry {
            id: u.id.clone(),
            wav: rel,
            speaker: u.speaker.clone(),
            transcript: Some(u.transcript.clone()),
            split: u.split,
        });
        serde_json::to_writer(&mut labels, &serde_json::json!({"id": u.id, "phones": u.phones}))?;
        labels.push(b'\n');
    }
    crate::audio::write_manifest(dir.join("manifest.jsonl"), &entries)?;
    crate::harness::write_atomic(&dir.join("phones.jsonl"), &labels)?;
    Ok(entries)
}

/// Phone label for each mel frame, taken at the centre of the analysis window.
pub fn frame_labels(phones: &[usize], n_frames: usize, hop: usize, win: usize, unit_samples: usize) -> Vec<usize> {
    (0..n_frames)
        .map(|f| {
            let centre = f * hop + win / 2;
            phones[(centre / unit_samples).min(phones.len() - 1)]
        })
        .collect()
}

/// Nearest-centroid frame classifier over mel frames, decoding runs of phones into text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyAsr {
    pub centroids: Vec<Vec<f64>>,
    /// Runs shorter than this many frames are discarded as noise.
    pub min_run: usize,
}

fn frame(mel: &MelSpectrogram, f: usize) -> Vec<f64> {
    (0..mel.n_mels).map(|m| mel.get(m, f)).collect()
}

impl ToyAsr {
    /// Fit one centroid per phone from `(mel, per-frame labels)` pairs.
    pub fn fit<'a>(data: impl IntoIterator<Item = (&'a MelSpectrogram, &'a [usize])>) -> Self {
        let mut sums: Vec<Vec<f64>> = Vec::new();
        let mut counts: Vec<usize> = Vec::new();
        for (mel, labels) in data {
            for (f, &l) in labels.iter().enumerate().take(mel.n_frames) {
                if sums.len() <= l {
                    sums.resize(l + 1, vec![0.0; mel.n_mels]);
                    counts.resize(l + 1, 0);
                }
                for (s, v) in sums[l].iter_mut().zip(frame(mel, f)) {
                    *s += v;
                }
                counts[l] += 1;
            }
        }
        let centroids = sums
            .into_iter()
            .zip(counts)
            .map(|(s, c)| s.into_iter().map(|v| v / c.max(1) as f64).collect())
            .collect();
        Self { centroids, min_run: 3 }
    }

    pub fn classify_frames(&self, mel: &MelSpectrogram) -> Vec<usize> {
        (0..mel.n_frames)
            .map(|f| {
                let x = frame(mel, f);
                let dist = |c: &Vec<f64>| c.iter().zip(&x).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
                (0..self.centroids.len())
                    .min_by(|&a, &b| dist(&self.centroids[a]).total_cmp(&dist(&self.centroids[b])))
                    .unwrap_or(SILENCE)
            })
            .collect()
    }

    pub fn transcribe(&self, mel: &MelSpectrogram) -> String {
        let labels = self.classify_frames(mel);
        let mut text = String::new();
        let mut i = 0;
        while i < labels.len() {
            let p = labels[i];
            let run = labels[i..].iter().take_while(|&&q| q == p).count();
            if run >= self.min_run {
                let c = PHONE_LETTERS.get(p).copied().unwrap_or('?');
                if !(c == ' ' && (text.is_empty() || text.ends_with(' '))) && !text.ends_with(c) {
                    text.push(c);
                }
            }
            i += run;
        }
        text.trim().to_string()
    }
}

/// `batch` rows of `time` unit indices; each row repeats its own random `period`-long
/// pattern over `vocab` codes from a random phase.
pub fn pattern_codes<R: Rng + ?Sized>(batch: usize, time: usize, vocab: usize, period: usize, rng: &mut R) -> Vec<usize> {
    let period = period.max(1);
    let mut out = Vec::with_capacity(batch * time);
    for _ in 0..batch {
        let pat: Vec<usize> = (0..period).map(|_| rng.random_range(0..vocab)).collect();
        let phase = rng.random_range(0..period);
        out.extend((0..time).map(|t| pat[(t + phase) % period]));
    }
    out
}

/// Normalised mel grids that cycle through `period` random prototype frames, two frames per
/// prototype (one unit), each utterance starting at a random phase. Small uniform noise is added.
pub fn pattern_mels(n_utts: usize, n_frames: usize, n_mels: usize, period: usize, seed: u64) -> Vec<MelSpectrogram> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let protos: Vec<Vec<f64>> = (0..period)
        .map(|_| (0..n_mels).map(|_| rng.random_range(0.1..0.9)).collect())
        .collect();
    (0..n_utts)
        .map(|_| {
            let phase = rng.random_range(0..period);
            let mut values = vec![0.0; n_mels * n_frames];
            for f in 0..n_frames {
                let p = &protos[(phase + f / 2) % period];
                for m in 0..n_mels {
                    values[m * n_frames + f] = p[m] + rng.random_range(-0.02..0.02);
                }
            }
            MelSpectrogram::new(n_mels, n_frames, values, "pattern", crate::audio::NormState::MinMax { min: 0.0, max: 1.0 })
        })
        .collect()
}

/// Vocoder training items that use the ground-truth phone labels as units.
pub fn phone_unit_items(corpus: &[SyntheticUtterance], split: Split) -> Vec<crate::models::VocoderItem> {
    corpus
        .iter()
        .filter(|u| u.split == split)
        .map(|u| crate::models::VocoderItem {
            id: u.id.clone(),
            units: u.phones.clone(),
            speaker: u.speaker_index,
            audio: u.wave.samples().to_vec(),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio::{log_mel, minmax_normalize, FeatureConfig};

    #[test]
    fn deterministic_and_aligned() {
        let cfg = SyntheticConfig::default();
        let a = generate(&cfg, 1);
        let b = generate(&cfg, 1);
        assert_eq!(a.len(), 48);
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.wave.samples(), y.wave.samples());
            assert_eq!(x.wave.len(), x.phones.len() * cfg.unit_samples);
            assert!(x.wave.samples().iter().all(|v| v.abs() <= 1.0));
        }
        assert!(a.iter().any(|u| u.split == Split::Val) && a.iter().any(|u| u.split == Split::Test));
    }

    #[test]
    fn toy_asr_reads_clean_audio() {
        let corpus = generate(&SyntheticConfig::default(), 2);
        let fc = FeatureConfig::toy();
        let mels: Vec<MelSpectrogram> = corpus
            .iter()
            .map(|u| minmax_normalize(&log_mel(&u.wave, &fc).unwrap(), Some((-23.0, 3.0))).unwrap())
            .collect();
        let labels: Vec<Vec<usize>> = corpus
            .iter()
            .zip(&mels)
            .map(|(u, m)| frame_labels(&u.phones, m.n_frames, fc.hop, fc.win_length(), 32))
            .collect();
        let asr = ToyAsr::fit(
            corpus
                .iter()
                .zip(mels.iter().zip(&labels))
                .filter(|(u, _)| u.split == Split::Train)
                .map(|(_, (m, l))| (m, l.as_slice())),
        );
        let mut exact = 0;
        let mut total = 0;
        for (u, m) in corpus.iter().zip(&mels).filter(|(u, _)| u.split == Split::Test) {
            total += 1;
            exact += (asr.transcribe(m) == u.transcript) as usize;
        }
        assert!(exact * 4 >= total * 3, "{exact}/{total}");
    }
}
