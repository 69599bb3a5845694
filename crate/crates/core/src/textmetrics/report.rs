use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{bert_score, bleu, meteor, rouge_l, tokenize, Embedder, EmbedderFailure, DEFAULT_MAX_N};
use crate::domain::TaskKind;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricError {
    #[error("no rows to aggregate")]
    EmptyInput,
    #[error("score out of range in sample {sample_id}")]
    OutOfRange { sample_id: String },
    #[error(transparent)]
    Embedder(#[from] EmbedderFailure),
}

/// One scored explanation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleScores {
    pub sample_id: String,
    pub bleu: f64,
    pub meteor: f64,
    pub rouge_l_precision: f64,
    pub bertscore_precision: f64,
}

impl SampleScores {
    fn values(&self) -> [f64; 4] {
        [
            self.bleu,
            self.meteor,
            self.rouge_l_precision,
            self.bertscore_precision,
        ]
    }
}

/// Column means over a task's samples. `aggregate.sample_id` is `"mean"`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub task: TaskKind,
    pub per_sample: Vec<SampleScores>,
    pub aggregate: SampleScores,
}

/// Scores `hypothesis` against `reference` with every metric.
pub fn score_pair(
    sample_id: &str,
    hypothesis: &str,
    reference: &str,
    embedder: &dyn Embedder,
) -> Result<SampleScores, EmbedderFailure> {
    let h = tokenize(hypothesis);
    let r = tokenize(reference);
    Ok(SampleScores {
        sample_id: sample_id.into(),
        bleu: bleu(&h, &r, DEFAULT_MAX_N),
        meteor: meteor(&h, &r),
        rouge_l_precision: rouge_l(&h, &r).precision,
        bertscore_precision: bert_score(&h, &r, embedder)?.precision,
    })
}

pub fn aggregate(rows: Vec<SampleScores>, task: TaskKind) -> Result<MetricReport, MetricError> {
    if rows.is_empty() {
        return Err(MetricError::EmptyInput);
    }
    let mut sums = [0.0; 4];
    for row in &rows {
        for (s, v) in sums.iter_mut().zip(row.values()) {
            if !(0.0..=1.0).contains(&v) {
                return Err(MetricError::OutOfRange {
                    sample_id: row.sample_id.clone(),
                });
            }
            *s += v;
        }
    }
    let n = rows.len() as f64;
    let aggregate = SampleScores {
        sample_id: "mean".into(),
        bleu: sums[0] / n,
        meteor: sums[1] / n,
        rouge_l_precision: sums[2] / n,
        bertscore_precision: sums[3] / n,
    };
    Ok(MetricReport {
        task,
        per_sample: rows,
        aggregate,
    })
}
