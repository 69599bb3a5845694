//! Independent oracles shared by the integration suites and the acceptance gate.
#![allow(dead_code)]

pub mod saliency;

use lumen_core::textmetrics::{
    bert_score, bleu, lcs_len, meteor, meteor_alignment, modified_precision, rouge_l, tokenize,
    Embedder, EmbedderFailure,
};

const TOL: f64 = 1e-9;

/// Three unit vectors: `a` and `b` at 60°, `a` and `c` orthogonal.
struct FixtureEmbedder;

impl Embedder for FixtureEmbedder {
    fn embed(&self, token: &str) -> Result<Vec<f64>, EmbedderFailure> {
        match token {
            "a" => Ok(vec![1.0, 0.0]),
            "b" => Ok(vec![0.5, 3f64.sqrt() / 2.0]),
            "c" => Ok(vec![0.0, 1.0]),
            other => Err(EmbedderFailure(format!("no vector for {other}"))),
        }
    }
}

fn near(label: &str, got: f64, want: f64) -> Result<(), String> {
    if (got - want).abs() < TOL {
        Ok(())
    } else {
        Err(format!("{label}: got {got}, expected {want}"))
    }
}

/// Hand-computed values for every metric.
pub fn metric_hand_examples() -> Result<String, String> {
    let hyp = tokenize("the cat sat on the mat");
    let reference = tokenize("the cat is on the mat");

    let r = rouge_l(&hyp, &reference);
    near("ROUGE-L P cat/mat", r.precision, 5.0 / 6.0)?;
    near("ROUGE-L R cat/mat", r.recall, 5.0 / 6.0)?;

    near("BLEU-4 cat/mat", bleu(&hyp, &reference, 4), 0.0)?;
    near("BLEU-3 cat/mat", bleu(&hyp, &reference, 3), 0.5)?;
    let sevens = tokenize("the the the the the the the");
    if modified_precision(&sevens, &reference, 1) != (2, 7) {
        return Err("clipped unigram precision of seven 'the' is not 2/7".into());
    }

    let cat = tokenize("cat");
    near("METEOR single-token identity", meteor(&cat, &cat), 0.5)?;
    let s = tokenize("the cat sat");
    near("METEOR three-token identity", meteor(&s, &s), 1.0 - 1.0 / 54.0)?;

    let b = bert_score(&tokenize("a b"), &tokenize("a"), &FixtureEmbedder).map_err(|e| e.to_string())?;
    near("BERTScore P", b.precision, 0.75)?;
    near("BERTScore R", b.recall, 1.0)?;
    let o = bert_score(&tokenize("a"), &tokenize("c"), &FixtureEmbedder).map_err(|e| e.to_string())?;
    near("BERTScore orthogonal P", o.precision, 0.0)?;
    near("BERTScore orthogonal R", o.recall, 0.0)?;
    Ok("ROUGE-L P 5/6, BLEU-3 0.5, METEOR 0.5, BERTScore P 0.75".into())
}

/// Every sequence over `0..alphabet` of length `0..=max_len`, shortest first.
pub fn all_sequences(alphabet: u8, max_len: usize) -> Vec<Vec<u8>> {
    let mut out = vec![Vec::new()];
    let mut layer = vec![Vec::new()];
    for _ in 0..max_len {
        let mut next = Vec::with_capacity(layer.len() * alphabet as usize);
        for s in &layer {
            for a in 0..alphabet {
                let mut t = s.clone();
                t.push(a);
                next.push(t);
            }
        }
        out.extend(next.iter().cloned());
        layer = next;
    }
    out
}

/// Dense id of a sequence within [`all_sequences`] ordering by length then base-`alphabet` value.
fn seq_id(seq: &[u8], alphabet: usize, offsets: &[usize]) -> usize {
    let v = seq.iter().fold(0usize, |acc, &s| acc * alphabet + s as usize);
    offsets[seq.len()] + v
}

/// Distinct subsequences of `seq` as `(len, id)`, longest first.
fn subsequences(seq: &[u8], alphabet: usize, offsets: &[usize]) -> Vec<(u8, u16)> {
    let n = seq.len();
    let mut subs: Vec<(u8, u16)> = (0u32..(1 << n))
        .map(|bits| {
            let sub: Vec<u8> = (0..n).filter(|i| bits >> i & 1 == 1).map(|i| seq[i]).collect();
            (sub.len() as u8, seq_id(&sub, alphabet, offsets) as u16)
        })
        .collect();
    subs.sort_unstable_by(|a, b| b.cmp(a));
    subs.dedup();
    subs
}

/// Checks `lcs_len` against subsequence-set intersection on every pair of
/// sequences over a 3-symbol alphabet up to `max_len`. Returns the pair count.
///
/// The LCS of `a` and `b` is the longest sequence lying in both sets of
/// distinct subsequences; no dynamic programming is involved.
pub fn exhaustive_lcs(max_len: usize) -> Result<u64, String> {
    let alphabet = 3usize;
    let seqs = all_sequences(alphabet as u8, max_len);
    let mut offsets = vec![0usize; max_len + 2];
    for len in 0..=max_len {
        offsets[len + 1] = offsets[len] + alphabet.pow(len as u32);
    }
    assert!(offsets[max_len + 1] <= u16::MAX as usize);
    let subs: Vec<Vec<(u8, u16)>> = seqs
        .iter()
        .map(|s| subsequences(s, alphabet, &offsets))
        .collect();
    let mut stamp = vec![u32::MAX; offsets[max_len + 1]];
    let mut pairs = 0u64;
    for (ai, a) in seqs.iter().enumerate() {
        for &(_, id) in &subs[ai] {
            stamp[id as usize] = ai as u32;
        }
        for (bi, b) in seqs.iter().enumerate() {
            let oracle = subs[bi]
                .iter()
                .find(|(_, id)| stamp[*id as usize] == ai as u32)
                .map_or(0, |(len, _)| *len as usize);
            let got = lcs_len(a, b);
            if got != oracle {
                return Err(format!("lcs({a:?}, {b:?}) = {got}, oracle {oracle}"));
            }
            pairs += 1;
        }
    }
    Ok(pairs)
}

/// `(m, min ch)` over all maximum one-to-one exact matchings, by full enumeration.
pub fn brute_alignment(h: &[u8], r: &[u8]) -> (usize, usize) {
    fn chunks(pairs: &[(usize, usize)]) -> usize {
        // pairs are pushed in increasing hypothesis order
        let mut ch = 0;
        for (k, p) in pairs.iter().enumerate() {
            if k == 0 || !(p.0 == pairs[k - 1].0 + 1 && p.1 == pairs[k - 1].1 + 1) {
                ch += 1;
            }
        }
        ch
    }
    fn rec(
        i: usize,
        h: &[u8],
        r: &[u8],
        used: &mut Vec<bool>,
        pairs: &mut Vec<(usize, usize)>,
        best: &mut (usize, usize),
    ) {
        if i == h.len() {
            let m = pairs.len();
            let ch = chunks(pairs);
            if m > best.0 || (m == best.0 && ch < best.1) {
                *best = (m, ch);
            }
            return;
        }
        // No leaf below can reach the best match count.
        if pairs.len() + (h.len() - i) < best.0 {
            return;
        }
        for j in 0..r.len() {
            if !used[j] && r[j] == h[i] {
                used[j] = true;
                pairs.push((i, j));
                rec(i + 1, h, r, used, pairs, best);
                pairs.pop();
                used[j] = false;
            }
        }
        rec(i + 1, h, r, used, pairs, best);
    }
    let mut best = (0, 0);
    rec(0, h, r, &mut vec![false; r.len()], &mut Vec::new(), &mut best);
    best
}

fn as_text(seq: &[u8]) -> String {
    seq.iter()
        .map(|&s| ["x", "y", "z"][s as usize])
        .collect::<Vec<_>>()
        .join(" ")
}

/// Checks `meteor_alignment` against [`brute_alignment`] on every pair of
/// sequences over a 3-symbol alphabet up to `max_len`.
pub fn exhaustive_meteor(max_len: usize) -> Result<u64, String> {
    let seqs = all_sequences(3, max_len);
    let toks: Vec<_> = seqs.iter().map(|s| tokenize(&as_text(s))).collect();
    let mut pairs = 0u64;
    for (a, ta) in seqs.iter().zip(&toks) {
        for (b, tb) in seqs.iter().zip(&toks) {
            let oracle = brute_alignment(a, b);
            let got = meteor_alignment(ta, tb);
            if !got.exact || (got.matches, got.chunks) != oracle {
                return Err(format!(
                    "alignment({a:?}, {b:?}) = {got:?}, oracle (m, ch) = {oracle:?}"
                ));
            }
            pairs += 1;
        }
    }
    Ok(pairs)
}

/// Ranks starting at 1, ties share their mean rank.
pub fn ranks(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut out = vec![0.0; xs.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && xs[idx[j + 1]] == xs[idx[i]] {
            j += 1;
        }
        let mean = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            out[k] = mean;
        }
        i = j + 1;
    }
    out
}

/// Spearman rank correlation (Pearson correlation of tie-averaged ranks).
pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    let (ra, rb) = (ranks(a), ranks(b));
    let n = ra.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let cov: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = ra.iter().map(|x| (x - ma) * (x - ma)).sum();
    let vb: f64 = rb.iter().map(|y| (y - mb) * (y - mb)).sum();
    cov / (va * vb).sqrt()
}

/// A 4×4 gray image with distinct, strictly positive intensities.
pub fn distinct_4x4() -> [[f64; 4]; 4] {
    let order = [7, 2, 12, 5, 14, 9, 0, 11, 3, 15, 6, 10, 1, 13, 8, 4];
    let mut rows = [[0.0; 4]; 4];
    for (i, &k) in order.iter().enumerate() {
        rows[i / 4][i % 4] = (k as f64 + 1.0) / 17.0;
    }
    rows
}
