use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FrameMetric {
    /// Angular distance `arccos(cos θ) / π` in [0, 1].
    Cosine,
    Euclidean,
    /// Sum of absolute differences.
    Abs,
}

impl FrameMetric {
    pub fn distance(self, a: &[f64], b: &[f64]) -> f64 {
        match self {
            FrameMetric::Euclidean => a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt(),
            FrameMetric::Abs => a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum(),
            FrameMetric::Cosine => {
                let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
                let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
                let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
                if na == 0.0 || nb == 0.0 {
                    return if na == nb { 0.0 } else { 0.5 };
                }
                (dot / (na * nb)).clamp(-1.0, 1.0).acos() / std::f64::consts::PI
            }
        }
    }
}

/// DTW over frame sequences (`frames × d`, row-major) with steps (1,0), (0,1), (1,1),
/// normalised by the length of the optimal path. Among equal-cost paths the longer one wins.
pub fn dtw_distance(x: &[f64], y: &[f64], dim: usize, metric: FrameMetric) -> f64 {
    let (n, m) = (x.len() / dim, y.len() / dim);
    assert!(n > 0 && m > 0, "dtw needs non-empty sequences");
    // (cost, path length)
    let mut prev = vec![(f64::INFINITY, 0usize); m + 1];
    let mut cur = vec![(f64::INFINITY, 0usize); m + 1];
    prev[0] = (0.0, 0);
    for i in 1..=n {
        cur[0] = (f64::INFINITY, 0);
        let xi = &x[(i - 1) * dim..i * dim];
        for j in 1..=m {
            let d = metric.distance(xi, &y[(j - 1) * dim..j * dim]);
            let mut best = prev[j - 1];
            for cand in [prev[j], cur[j - 1]] {
                if cand.0 < best.0 || (cand.0 == best.0 && cand.1 > best.1) {
                    best = cand;
                }
            }
            cur[j] = (best.0 + d, best.1 + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    let (cost, len) = prev[m];
    cost / len as f64
}
