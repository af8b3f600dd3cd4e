use std::collections::HashMap;

use super::{EvalError, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct BleuReport {
    /// Corpus BLEU-4 on a 0..100 scale.
    pub bleu: f64,
    pub precisions: [f64; 4],
    pub brevity_penalty: f64,
    pub candidate_len: usize,
    pub reference_len: usize,
}

fn ngram_counts<T: AsRef<str>>(toks: &[T], n: usize) -> HashMap<Vec<&str>, usize> {
    let mut m = HashMap::new();
    if toks.len() >= n {
        for w in toks.windows(n) {
            *m.entry(w.iter().map(AsRef::as_ref).collect()).or_insert(0) += 1;
        }
    }
    m
}

/// Corpus-level BLEU-4: clipped n-gram matches and totals are summed over
/// the corpus before taking precisions. With `smoothing`, an order with zero
/// matches uses (0 + 1) / (total + 1).
pub fn bleu4_with<T: AsRef<str>>(candidates: &[Vec<T>], references: &[Vec<T>], smoothing: bool) -> Result<BleuReport> {
    if candidates.len() != references.len() {
        return Err(EvalError::LengthMismatch(candidates.len(), references.len()));
    }
    if candidates.is_empty() {
        return Err(EvalError::EmptyCorpus);
    }
    let mut matches = [0usize; 4];
    let mut totals = [0usize; 4];
    let (mut c_len, mut r_len) = (0, 0);
    for (c, r) in candidates.iter().zip(references) {
        c_len += c.len();
        r_len += r.len();
        for n in 1..=4 {
            let rc = ngram_counts(r, n);
            for (g, cnt) in ngram_counts(c, n) {
                matches[n - 1] += cnt.min(rc.get(&g).copied().unwrap_or(0));
            }
            totals[n - 1] += c.len().saturating_sub(n - 1);
        }
    }
    let mut precisions = [0.0; 4];
    for n in 0..4 {
        precisions[n] = if matches[n] > 0 {
            matches[n] as f64 / totals[n] as f64
        } else if smoothing {
            1.0 / (totals[n] + 1) as f64
        } else {
            0.0
        };
    }
    let brevity_penalty = if c_len == 0 {
        0.0
    } else if c_len >= r_len {
        1.0
    } else {
        (1.0 - r_len as f64 / c_len as f64).exp()
    };
    let bleu = if precisions.contains(&0.0) {
        0.0
    } else {
        let log_mean = precisions.iter().map(|p| p.ln()).sum::<f64>() / 4.0;
        100.0 * brevity_penalty * log_mean.exp()
    };
    Ok(BleuReport { bleu, precisions, brevity_penalty, candidate_len: c_len, reference_len: r_len })
}

/// Smoothed corpus BLEU-4.
pub fn bleu4<T: AsRef<str>>(candidates: &[Vec<T>], references: &[Vec<T>]) -> Result<BleuReport> {
    bleu4_with(candidates, references, true)
}
