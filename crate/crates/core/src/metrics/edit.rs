use serde::{Deserialize, Serialize};

use super::MetricError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TokenUnit {
    /// Characters with whitespace removed.
    Char,
    /// Whitespace-separated words.
    Word,
    /// Whitespace-separated phoneme symbols supplied by the caller.
    Phoneme,
}

pub fn tokenize(text: &str, unit: TokenUnit) -> Vec<String> {
    match unit {
        TokenUnit::Char => text.chars().filter(|c| !c.is_whitespace()).map(String::from).collect(),
        TokenUnit::Word | TokenUnit::Phoneme => text.split_whitespace().map(String::from).collect(),
    }
}

/// Levenshtein distance with unit costs, two-row dynamic programme.
pub fn edit_distance<T: PartialEq>(reference: &[T], hypothesis: &[T]) -> usize {
    let mut prev: Vec<usize> = (0..=hypothesis.len()).collect();
    let mut cur = vec![0; hypothesis.len() + 1];
    for (i, r) in reference.iter().enumerate() {
        cur[0] = i + 1;
        for (j, h) in hypothesis.iter().enumerate() {
            let sub = prev[j] + usize::from(r != h);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[hypothesis.len()]
}

/// `100 · edit_distance / len(reference)` for one pair.
pub fn error_rate(reference: &str, hypothesis: &str, unit: TokenUnit) -> Result<f64, MetricError> {
    corpus_error_rate(&[(reference, hypothesis)], unit)
}

/// Corpus-pooled rate: total edits over total reference tokens.
pub fn corpus_error_rate(pairs: &[(&str, &str)], unit: TokenUnit) -> Result<f64, MetricError> {
    let (mut edits, mut tokens) = (0usize, 0usize);
    for (r, h) in pairs {
        let r = tokenize(r, unit);
        if r.is_empty() {
            return Err(MetricError::EmptyReference);
        }
        edits += edit_distance(&r, &tokenize(h, unit));
        tokens += r.len();
    }
    if tokens == 0 {
        return Err(MetricError::EmptyReference);
    }
    Ok(100.0 * edits as f64 / tokens as f64)
}

/// Mean of per-utterance rates (reported alongside the pooled value in verbose output).
pub fn utterance_mean_error_rate(pairs: &[(&str, &str)], unit: TokenUnit) -> Result<f64, MetricError> {
    if pairs.is_empty() {
        return Err(MetricError::EmptyReference);
    }
    let mut total = 0.0;
    for &(r, h) in pairs {
        total += error_rate(r, h, unit)?;
    }
    Ok(total / pairs.len() as f64)
}
