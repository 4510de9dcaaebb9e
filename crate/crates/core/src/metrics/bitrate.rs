use std::collections::HashMap;

use super::MetricError;

/// Empirical entropy in bits of a symbol stream.
pub fn entropy_bits(symbols: impl IntoIterator<Item = usize>) -> (f64, usize) {
    let mut counts: HashMap<usize, usize> = HashMap::new();
    let mut n = 0;
    for s in symbols {
        *counts.entry(s).or_default() += 1;
        n += 1;
    }
    let mut keys: Vec<_> = counts.into_iter().collect();
    keys.sort_unstable();
    let h = keys
        .iter()
        .map(|&(_, c)| {
            let p = c as f64 / n as f64;
            -p * p.log2()
        })
        .sum::<f64>();
    (h.max(0.0), n)
}

/// `(N / D) · H` bits per second over all sequences; optionally with repeated symbols merged.
pub fn bitrate(sequences: &[Vec<usize>], total_duration: f64, collapse_runs: bool) -> Result<f64, MetricError> {
    if !(total_duration > 0.0) {
        return Err(MetricError::NonPositiveDuration);
    }
    let symbols: Vec<usize> = sequences
        .iter()
        .flat_map(|seq| {
            let mut out = seq.clone();
            if collapse_runs {
                out.dedup();
            }
            out
        })
        .collect();
    if symbols.is_empty() {
        return Err(MetricError::Empty("unit sequences"));
    }
    let (h, n) = entropy_bits(symbols);
    Ok(n as f64 / total_duration * h)
}
