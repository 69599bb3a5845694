use alloc::collections::BTreeMap;

use super::TokenSeq;

pub const DEFAULT_MAX_N: usize = 4;

fn ngram_counts(tokens: &[alloc::string::String], n: usize) -> BTreeMap<&[alloc::string::String], usize> {
    let mut counts = BTreeMap::new();
    if n == 0 || tokens.len() < n {
        return counts;
    }
    for w in tokens.windows(n) {
        *counts.entry(w).or_insert(0) += 1;
    }
    counts
}

/// `(clipped, total)` n-gram counts of `hyp` against `reference`.
pub fn modified_precision(hyp: &TokenSeq, reference: &TokenSeq, n: usize) -> (usize, usize) {
    let h = ngram_counts(hyp.tokens(), n);
    let r = ngram_counts(reference.tokens(), n);
    let total = h.values().sum();
    let clipped = h
        .iter()
        .map(|(g, c)| (*c).min(r.get(g).copied().unwrap_or(0)))
        .sum();
    (clipped, total)
}

/// Unsmoothed sentence BLEU with uniform weights over orders `1..=max_n`.
///
/// Any order with no hypothesis n-grams or no clipped matches gives 0.
pub fn bleu(hyp: &TokenSeq, reference: &TokenSeq, max_n: usize) -> f64 {
    if max_n == 0 || hyp.is_empty() {
        return 0.0;
    }
    let mut log_sum = 0.0;
    for n in 1..=max_n {
        let (clipped, total) = modified_precision(hyp, reference, n);
        if clipped == 0 || total == 0 {
            return 0.0;
        }
        log_sum += libm::log(clipped as f64 / total as f64);
    }
    let ratio = reference.len() as f64 / hyp.len() as f64;
    let bp = if ratio <= 1.0 { 1.0 } else { libm::exp(1.0 - ratio) };
    (bp * libm::exp(log_sum / max_n as f64)).clamp(0.0, 1.0)
}
