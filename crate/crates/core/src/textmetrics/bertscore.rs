//! Greedy embedding-matching score in the style of BERTScore.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use thiserror::Error;

use super::{Prf, TokenSeq};

/// Dimension of [`HashingEmbedder`] vectors.
pub const HASH_DIM: usize = 64;

const UNIT_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Error)]
#[error("embedder failure: {0}")]
pub struct EmbedderFailure(pub String);

/// Maps a token to a unit-norm vector, deterministically.
pub trait Embedder: Send + Sync {
    fn embed(&self, token: &str) -> Result<Vec<f64>, EmbedderFailure>;
}

/// Feature hashing of character 3-grams of `<token>` into [`HASH_DIM`]
/// buckets (FNV-1a), L2-normalized.
#[derive(Debug, Clone, Copy, Default)]
pub struct HashingEmbedder;

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

impl Embedder for HashingEmbedder {
    fn embed(&self, token: &str) -> Result<Vec<f64>, EmbedderFailure> {
        let mut padded = Vec::with_capacity(token.len() + 2);
        padded.push(b'<');
        padded.extend_from_slice(token.as_bytes());
        padded.push(b'>');
        let mut v = vec![0.0; HASH_DIM];
        // Byte 3-grams; every token yields at least one since padding adds two.
        for w in padded.windows(3) {
            v[(fnv1a(w) % HASH_DIM as u64) as usize] += 1.0;
        }
        let norm = libm::sqrt(v.iter().map(|x| x * x).sum::<f64>());
        v.iter_mut().for_each(|x| *x /= norm);
        Ok(v)
    }
}

fn embed_all(tokens: &TokenSeq, embedder: &dyn Embedder) -> Result<Vec<Vec<f64>>, EmbedderFailure> {
    let mut out: Vec<Vec<f64>> = Vec::with_capacity(tokens.len());
    for t in tokens.tokens() {
        let v = embedder.embed(t)?;
        if v.is_empty() || v.iter().any(|x| !x.is_finite()) {
            return Err(EmbedderFailure(alloc::format!("non-finite or empty vector for {t:?}")));
        }
        let norm = libm::sqrt(v.iter().map(|x| x * x).sum::<f64>());
        if (norm - 1.0).abs() > UNIT_TOLERANCE {
            return Err(EmbedderFailure(alloc::format!("vector for {t:?} has norm {norm}")));
        }
        if out.first().is_some_and(|f| f.len() != v.len()) {
            return Err(EmbedderFailure("inconsistent embedding dimension".into()));
        }
        out.push(v);
    }
    Ok(out)
}

fn mean_best(from: &[Vec<f64>], to: &[Vec<f64>]) -> f64 {
    let total: f64 = from
        .iter()
        .map(|a| {
            to.iter()
                .map(|b| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>())
                .fold(f64::NEG_INFINITY, f64::max)
                .clamp(0.0, 1.0)
        })
        .sum();
    total / from.len() as f64
}

/// Precision is the mean over hypothesis tokens of the best cosine against
/// any reference token; recall is the same from the reference side. Each
/// best cosine is clamped to `[0, 1]`. No idf weighting.
pub fn bert_score(
    hyp: &TokenSeq,
    reference: &TokenSeq,
    embedder: &dyn Embedder,
) -> Result<Prf, EmbedderFailure> {
    let h = embed_all(hyp, embedder)?;
    let r = embed_all(reference, embedder)?;
    if h.is_empty() || r.is_empty() {
        return Ok(Prf::ZERO);
    }
    if h[0].len() != r[0].len() {
        return Err(EmbedderFailure("inconsistent embedding dimension".into()));
    }
    Ok(Prf::new(mean_best(&h, &r), mean_best(&r, &h)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::textmetrics::tokenize;

    struct Fixture;

    impl Embedder for Fixture {
        fn embed(&self, token: &str) -> Result<Vec<f64>, EmbedderFailure> {
            match token {
                "a" => Ok(vec![1.0, 0.0]),
                "b" => Ok(vec![0.5, libm::sqrt(3.0) / 2.0]),
                "c" => Ok(vec![0.0, 1.0]),
                "bad" => Ok(vec![2.0, 0.0]),
                _ => Err(EmbedderFailure("unknown token".into())),
            }
        }
    }

    #[test]
    fn fixture_greedy_matching() {
        let s = bert_score(&tokenize("a b"), &tokenize("a"), &Fixture).unwrap();
        assert!((s.precision - 0.75).abs() < 1e-9);
        assert!((s.recall - 1.0).abs() < 1e-9);
        let o = bert_score(&tokenize("a"), &tokenize("c"), &Fixture).unwrap();
        assert_eq!((o.precision, o.recall), (0.0, 0.0));
    }

    #[test]
    fn failures() {
        assert!(bert_score(&tokenize("bad"), &tokenize("a"), &Fixture).is_err());
        assert!(bert_score(&tokenize("zzz"), &tokenize("a"), &Fixture).is_err());
    }

    #[test]
    fn hashing_embedder_is_unit_and_deterministic() {
        for t in ["a", "cat", "golden", "...", "ünïcode"] {
            let v = HashingEmbedder.embed(t).unwrap();
            assert_eq!(v.len(), HASH_DIM);
            let n: f64 = v.iter().map(|x| x * x).sum();
            assert!((n - 1.0).abs() < 1e-12);
            assert_eq!(v, HashingEmbedder.embed(t).unwrap());
        }
        let s = tokenize("the dog sat");
        let p = bert_score(&s, &s, &HashingEmbedder).unwrap();
        assert!((p.f1 - 1.0).abs() < 1e-12);
    }
}
