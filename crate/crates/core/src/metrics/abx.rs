use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{dtw_distance, FrameMetric, MetricError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AbxItem {
    /// `frames × dim`, row-major.
    pub features: Vec<f64>,
    pub dim: usize,
    pub category: String,
    pub speaker: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AbxMode {
    /// A, B and X share one speaker.
    Within,
    /// A and B share a speaker; X comes from another.
    Across,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AbxConfig {
    pub metric: FrameMetric,
    /// Enumerate every triplet up to this count; above it, sample this many with `seed`.
    pub max_triplets: usize,
    pub seed: u64,
}

impl Default for AbxConfig {
    fn default() -> Self {
        Self {
            metric: FrameMetric::Cosine,
            max_triplets: 100_000,
            seed: 0,
        }
    }
}

/// ABX error (%) with the default settings.
pub fn abx_error(items: &[AbxItem], mode: AbxMode) -> Result<f64, MetricError> {
    abx_error_with(items, mode, &AbxConfig::default())
}

fn valid(items: &[AbxItem], mode: AbxMode, a: usize, b: usize, x: usize) -> bool {
    let (ia, ib, ix) = (&items[a], &items[b], &items[x]);
    a != x
        && ia.category == ix.category
        && ib.category != ix.category
        && ia.speaker == ib.speaker
        && match mode {
            AbxMode::Within => ix.speaker == ia.speaker,
            AbxMode::Across => ix.speaker != ia.speaker,
        }
}

/// Mean over triplets (A same category as X, B different) of 1 if `d(B,X) < d(A,X)`,
/// 0.5 on an exact tie, 0 otherwise, as a percentage.
pub fn abx_error_with(items: &[AbxItem], mode: AbxMode, cfg: &AbxConfig) -> Result<f64, MetricError> {
    let mut cats: Vec<&str> = items.iter().map(|i| i.category.as_str()).collect();
    cats.sort_unstable();
    cats.dedup();
    if cats.len() < 2 {
        return Err(MetricError::TooFewCategories);
    }
    let n = items.len();
    // pairwise distances, computed in parallel and stored by index
    let dist: Vec<f64> = (0..n * n)
        .into_par_iter()
        .map(|k| {
            let (i, j) = (k / n, k % n);
            if i < j {
                dtw_distance(&items[i].features, &items[j].features, items[i].dim, cfg.metric)
            } else {
                0.0
            }
        })
        .collect();
    let d = |i: usize, j: usize| if i < j { dist[i * n + j] } else { dist[j * n + i] };
    let score = |a: usize, b: usize, x: usize| {
        let (da, db) = (d(a, x), d(b, x));
        if db < da {
            1.0
        } else if db == da {
            0.5
        } else {
            0.0
        }
    };

    let mut triplets = Vec::new();
    let mut overflow = false;
    'outer: for x in 0..n {
        for a in 0..n {
            if items[a].category != items[x].category || a == x {
                continue;
            }
            for b in 0..n {
                if valid(items, mode, a, b, x) {
                    if triplets.len() == cfg.max_triplets {
                        overflow = true;
                        break 'outer;
                    }
                    triplets.push((a, b, x));
                }
            }
        }
    }
    if triplets.is_empty() {
        return Err(MetricError::NoTriplets(mode));
    }
    if !overflow {
        let total: f64 = triplets.iter().map(|&(a, b, x)| score(a, b, x)).sum();
        return Ok(100.0 * total / triplets.len() as f64);
    }
    // rejection-sample uniformly over valid triplets
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (mut total, mut drawn) = (0.0, 0usize);
    while drawn < cfg.max_triplets {
        let (a, b, x) = (rng.random_range(0..n), rng.random_range(0..n), rng.random_range(0..n));
        if valid(items, mode, a, b, x) {
            total += score(a, b, x);
            drawn += 1;
        }
    }
    Ok(100.0 * total / drawn as f64)
}
