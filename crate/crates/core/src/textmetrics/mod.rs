//! Text similarity metrics for scoring explanations against references.
//!
//! All metrics are sentence-level and single-reference. Texts go through
//! [`tokenize`] first: lowercase, whitespace split, punctuation runs
//! detached as their own tokens.

mod bertscore;
mod bleu;
mod meteor;
mod report;
mod rouge;

use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

pub use bertscore::{bert_score, Embedder, EmbedderFailure, HashingEmbedder, HASH_DIM};
pub use bleu::{bleu, modified_precision, DEFAULT_MAX_N};
pub use meteor::{meteor, meteor_alignment, Alignment};
pub use report::{aggregate, score_pair, MetricError, MetricReport, SampleScores};
pub use rouge::{lcs_len, rouge_l};

/// Characters split off from words. Maximal runs stay together.
pub const PUNCTUATION: &[char] = &['.', ',', '!', '?', ';', ':', '(', ')', '"', '\''];

/// Tokenized text. Tokens are non-empty.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default, Serialize)]
pub struct TokenSeq {
    tokens: Vec<String>,
}

impl TokenSeq {
    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// Precision, recall and their harmonic mean.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Prf {
    pub const ZERO: Prf = Prf {
        precision: 0.0,
        recall: 0.0,
        f1: 0.0,
    };

    pub(crate) fn new(precision: f64, recall: f64) -> Self {
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        Prf {
            precision,
            recall,
            f1,
        }
    }
}

pub fn tokenize(text: &str) -> TokenSeq {
    let lower = text.to_lowercase();
    let mut tokens = Vec::new();
    for word in lower.split_whitespace() {
        let mut current = String::new();
        let mut in_punct = false;
        for ch in word.chars() {
            let p = PUNCTUATION.contains(&ch);
            if p != in_punct && !current.is_empty() {
                tokens.push(core::mem::take(&mut current));
            }
            in_punct = p;
            current.push(ch);
        }
        if !current.is_empty() {
            tokens.push(current);
        }
    }
    TokenSeq { tokens }
}
