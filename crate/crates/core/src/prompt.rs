//! Structured prompts and explanation records.
//!
//! A prompt walks the vision-language model through three stages in a fixed
//! order: locate the focal areas in the image and its saliency overlay,
//! check the saliency against the model's prediction, then compare the
//! prediction with the ground truth and judge reliability.
//!
//! Template wording lives in versioned text files with the placeholders
//! `{task}`, `{prediction}`, `{ground_truth}`, `{target_box}`,
//! `{agreement}` and `{verdict}`.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{
    argmax, iou, majority_label, top1, GroundTruth, GroundTruthPayload, Prediction, TargetSpec,
    TaskKind, Top1,
};

/// Identifier of the bundled template set.
pub const TEMPLATE_ID: &str = "v1";

/// Prefix of the prompt line carrying the prediction.
pub const PREDICTED_PREFIX: &str = "Predicted: ";
/// Prefix of the prompt line carrying the match/mismatch hint.
pub const VERDICT_PREFIX: &str = "Verdict hint: ";

/// Minimum IoU for a detection to count as matching an annotated box.
pub const DETECTION_MATCH_IOU: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    FocalAreas,
    PredictionCheck,
    ReliabilityCheck,
}

impl Stage {
    pub const ORDER: [Stage; 3] = [
        Stage::FocalAreas,
        Stage::PredictionCheck,
        Stage::ReliabilityCheck,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::FocalAreas => "focal_areas",
            Stage::PredictionCheck => "prediction_check",
            Stage::ReliabilityCheck => "reliability_check",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum MessagePart {
    Text { text: String },
    /// Content address of a PNG in the blob store.
    ImageRef { blob: String },
}

/// Ordered multimodal message with a stage tag per part.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub task: TaskKind,
    pub template_id: String,
    pub parts: Vec<MessagePart>,
    pub stage_tags: Vec<Stage>,
}

impl PromptBundle {
    /// Checks the stage ordering and that the focal stage carries an image.
    pub fn check(&self) -> Result<(), PromptError> {
        if self.parts.len() != self.stage_tags.len() {
            return Err(PromptError::Malformed("parts and stage tags differ in length"));
        }
        if self.stage_tags.windows(2).any(|w| w[0] > w[1]) {
            return Err(PromptError::Malformed("stages out of order"));
        }
        for stage in Stage::ORDER {
            if !self.stage_tags.contains(&stage) {
                return Err(PromptError::Malformed("missing stage"));
            }
        }
        let focal_image = self
            .parts
            .iter()
            .zip(&self.stage_tags)
            .any(|(p, s)| *s == Stage::FocalAreas && matches!(p, MessagePart::ImageRef { .. }));
        if !focal_image {
            return Err(PromptError::Malformed("focal stage has no image"));
        }
        Ok(())
    }

    pub fn texts(&self) -> impl Iterator<Item = &str> {
        self.parts.iter().filter_map(|p| match p {
            MessagePart::Text { text } => Some(text.as_str()),
            MessagePart::ImageRef { .. } => None,
        })
    }

    pub fn image_refs(&self) -> impl Iterator<Item = &str> {
        self.parts.iter().filter_map(|p| match p {
            MessagePart::ImageRef { blob } => Some(blob.as_str()),
            MessagePart::Text { .. } => None,
        })
    }

    /// Text of all parts tagged `stage`, joined by newlines.
    pub fn stage_text(&self, stage: Stage) -> String {
        let mut out = String::new();
        for (p, s) in self.parts.iter().zip(&self.stage_tags) {
            if let (MessagePart::Text { text }, true) = (p, *s == stage) {
                if !out.is_empty() {
                    out.push('\n');
                }
                out.push_str(text);
            }
        }
        out
    }

    /// Value of the first text line starting with `prefix`.
    pub fn line_value(&self, prefix: &str) -> Option<&str> {
        self.texts()
            .flat_map(str::lines)
            .find_map(|l| l.strip_prefix(prefix))
            .map(str::trim)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Match,
    Mismatch,
}

impl Verdict {
    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::Match => "match",
            Verdict::Mismatch => "mismatch",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PromptError {
    #[error("unresolvable reference: {0}")]
    UnresolvableRef(String),
    #[error("task mismatch: {0}")]
    TaskMismatch(String),
    #[error("prediction has nothing to explain")]
    EmptyPrediction,
    #[error("malformed prompt: {0}")]
    Malformed(&'static str),
}

/// Resolves content addresses. Implemented by the blob store.
pub trait BlobLookup {
    fn contains(&self, blob_ref: &str) -> bool;
}

impl<F: Fn(&str) -> bool> BlobLookup for F {
    fn contains(&self, blob_ref: &str) -> bool {
        self(blob_ref)
    }
}

/// Inputs to [`build_prompt`].
#[derive(Debug, Clone)]
pub struct PromptInputs<'a> {
    pub task: TaskKind,
    pub image_ref: &'a str,
    pub overlay_ref: &'a str,
    pub prediction: &'a Prediction,
    pub ground_truth: &'a GroundTruth,
    pub target: &'a TargetSpec,
    /// Class names of the explained model.
    pub label_set: &'a [String],
}

struct Template {
    focal_areas: &'static str,
    prediction_check: &'static str,
    reliability_check: &'static str,
}

fn template(task: TaskKind) -> Template {
    match task {
        TaskKind::Classification => Template {
            focal_areas: include_str!("../templates/v1/classification/focal_areas.txt"),
            prediction_check: include_str!("../templates/v1/classification/prediction_check.txt"),
            reliability_check: include_str!("../templates/v1/classification/reliability_check.txt"),
        },
        TaskKind::Segmentation => Template {
            focal_areas: include_str!("../templates/v1/segmentation/focal_areas.txt"),
            prediction_check: include_str!("../templates/v1/segmentation/prediction_check.txt"),
            reliability_check: include_str!("../templates/v1/segmentation/reliability_check.txt"),
        },
        TaskKind::Detection => Template {
            focal_areas: include_str!("../templates/v1/detection/focal_areas.txt"),
            prediction_check: include_str!("../templates/v1/detection/prediction_check.txt"),
            reliability_check: include_str!("../templates/v1/detection/reliability_check.txt"),
        },
    }
}

fn fill(template: &str, slots: &[(&str, &str)]) -> String {
    let mut out = String::from(template.trim_end());
    for (name, value) in slots {
        let key = format!("{{{name}}}");
        out = out.replace(&key, value);
    }
    out
}

fn label_name(labels: &[String], id: usize) -> String {
    labels
        .get(id)
        .cloned()
        .unwrap_or_else(|| format!("class {id}"))
}

/// Formats a box as `[x_min, y_min, x_max, y_max]` with one decimal.
pub fn format_box(b: &crate::domain::BoundingBox) -> String {
    let [x0, y0, x1, y1] = b.to_array();
    format!("[{x0:.1}, {y0:.1}, {x1:.1}, {y1:.1}]")
}

/// Human-readable prediction, the target box text, and the predicted class id.
fn describe_prediction(inputs: &PromptInputs<'_>) -> Result<(String, String, usize), PromptError> {
    let labels = inputs.label_set;
    match (inputs.task, inputs.target) {
        (TaskKind::Classification, _) => match top1(inputs.prediction) {
            Ok(Top1::Class(c)) => Ok((label_name(labels, c), "n/a".to_string(), c)),
            _ => Err(PromptError::EmptyPrediction),
        },
        (TaskKind::Segmentation, TargetSpec::Class { class_id }) => {
            Ok((label_name(labels, *class_id), "n/a".to_string(), *class_id))
        }
        (TaskKind::Detection, TargetSpec::Detection { detection, .. }) => {
            let c = detection.top_class();
            Ok((label_name(labels, c), format_box(detection.bbox()), c))
        }
        _ => Err(PromptError::TaskMismatch(
            "target kind does not fit the task".to_string(),
        )),
    }
}

fn describe_ground_truth(gt: &GroundTruth, labels: &[String]) -> String {
    match gt.payload() {
        GroundTruthPayload::Label { class_id } => label_name(labels, *class_id),
        GroundTruthPayload::LabelMap { label_map } => {
            let total = label_map.labels().len() as f64;
            let mut ids: Vec<u32> = label_map.labels().to_vec();
            ids.sort_unstable();
            ids.dedup();
            let mut out = String::new();
            for (i, id) in ids.iter().enumerate() {
                if i > 0 {
                    out.push_str(", ");
                }
                let share = 100.0 * label_map.count(*id) as f64 / total;
                let _ = write!(out, "{} ({share:.1}% of pixels)", label_name(labels, *id as usize));
            }
            out
        }
        GroundTruthPayload::Boxes { boxes } => {
            if boxes.is_empty() {
                return "no annotated objects".to_string();
            }
            let mut out = String::new();
            for (i, b) in boxes.iter().enumerate() {
                if i > 0 {
                    out.push_str("; ");
                }
                let _ = write!(out, "{} at {}", label_name(labels, b.class_id), format_box(&b.bbox));
            }
            out
        }
    }
}

/// Whether the explained prediction agrees with the ground truth.
///
/// - classification: the top-1 class equals the ground-truth label;
/// - segmentation: the target class is predicted somewhere and the
///   majority ground-truth label over those pixels is the target class;
/// - detection: some annotated box of the target's top class overlaps the
///   target box with IoU of at least [`DETECTION_MATCH_IOU`].
pub fn verdict(
    prediction: &Prediction,
    target: &TargetSpec,
    ground_truth: &GroundTruth,
) -> Result<Verdict, PromptError> {
    if prediction.task() != ground_truth.task() {
        return Err(PromptError::TaskMismatch(format!(
            "prediction is {}, ground truth is {}",
            prediction.task(),
            ground_truth.task()
        )));
    }
    let matched = match (ground_truth.payload(), target) {
        (GroundTruthPayload::Label { class_id }, _) => {
            let probs = prediction.class_probs().ok_or(PromptError::EmptyPrediction)?;
            argmax(probs).ok_or(PromptError::EmptyPrediction)? == *class_id
        }
        (GroundTruthPayload::LabelMap { label_map }, TargetSpec::Class { class_id }) => {
            let pred = prediction.label_map().ok_or(PromptError::EmptyPrediction)?;
            if pred.labels().len() != label_map.labels().len() {
                return Err(PromptError::TaskMismatch(
                    "ground-truth map size differs from prediction".to_string(),
                ));
            }
            let under = pred
                .labels()
                .iter()
                .zip(label_map.labels())
                .filter(|(p, _)| **p as usize == *class_id)
                .map(|(_, g)| *g);
            majority_label(under).is_some_and(|m| m as usize == *class_id)
        }
        (GroundTruthPayload::Boxes { boxes }, TargetSpec::Detection { detection, .. }) => {
            let c = detection.top_class();
            boxes
                .iter()
                .any(|b| b.class_id == c && iou(&b.bbox, detection.bbox()) >= DETECTION_MATCH_IOU)
        }
        _ => {
            return Err(PromptError::TaskMismatch(
                "target kind does not fit the task".to_string(),
            ))
        }
    };
    Ok(if matched {
        Verdict::Match
    } else {
        Verdict::Mismatch
    })
}

/// Assembles the three-stage prompt. Pure: identical inputs give
/// byte-identical bundles.
pub fn build_prompt(
    inputs: &PromptInputs<'_>,
    blobs: &dyn BlobLookup,
) -> Result<PromptBundle, PromptError> {
    for r in [inputs.image_ref, inputs.overlay_ref] {
        if !blobs.contains(r) {
            return Err(PromptError::UnresolvableRef(r.to_string()));
        }
    }
    if inputs.prediction.task() != inputs.task || inputs.ground_truth.task() != inputs.task {
        return Err(PromptError::TaskMismatch(format!(
            "task {}, prediction {}, ground truth {}",
            inputs.task,
            inputs.prediction.task(),
            inputs.ground_truth.task()
        )));
    }
    let (predicted, target_box, _) = describe_prediction(inputs)?;
    let truth = describe_ground_truth(inputs.ground_truth, inputs.label_set);
    let v = verdict(inputs.prediction, inputs.target, inputs.ground_truth)?;
    let agreement = match v {
        Verdict::Match => "The prediction matches the ground truth.".to_string(),
        Verdict::Mismatch => format!(
            "The prediction does not match the ground truth: the model predicted \"{predicted}\" but the ground truth is {truth}."
        ),
    };
    let slots = [
        ("task", inputs.task.as_str()),
        ("prediction", predicted.as_str()),
        ("ground_truth", truth.as_str()),
        ("target_box", target_box.as_str()),
        ("agreement", agreement.as_str()),
        ("verdict", v.as_str()),
    ];
    let t = template(inputs.task);
    let parts = alloc::vec![
        MessagePart::ImageRef {
            blob: inputs.image_ref.to_string()
        },
        MessagePart::ImageRef {
            blob: inputs.overlay_ref.to_string()
        },
        MessagePart::Text {
            text: fill(t.focal_areas, &slots)
        },
        MessagePart::Text {
            text: fill(t.prediction_check, &slots)
        },
        MessagePart::Text {
            text: fill(t.reliability_check, &slots)
        },
    ];
    let stage_tags = alloc::vec![
        Stage::FocalAreas,
        Stage::FocalAreas,
        Stage::FocalAreas,
        Stage::PredictionCheck,
        Stage::ReliabilityCheck,
    ];
    let bundle = PromptBundle {
        task: inputs.task,
        template_id: TEMPLATE_ID.to_string(),
        parts,
        stage_tags,
    };
    bundle.check()?;
    Ok(bundle)
}

/// What was asked for in an explanation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplanationRequest {
    pub image_ref: String,
    pub task: TaskKind,
    pub model_id: String,
    pub method_id: String,
    pub target: TargetSpec,
    pub ground_truth: GroundTruth,
}

/// Persisted result of one explanation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplanationRecord {
    pub record_id: u64,
    pub request: ExplanationRequest,
    pub saliency_ref: String,
    pub overlay_ref: String,
    pub prediction: Prediction,
    pub template_id: String,
    pub explanation_text: String,
    pub verdict: Verdict,
    /// RFC 3339 timestamp.
    pub created_at: String,
    pub lvm_provider: String,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{BoundingBox, Detection, GroundTruthBox, LabelMap};
    use alloc::vec;

    fn labels(names: &[&str]) -> Vec<String> {
        names.iter().map(|s| s.to_string()).collect()
    }

    fn any_ref(_: &str) -> bool {
        true
    }

    fn cls_inputs<'a>(
        pred: &'a Prediction,
        gt: &'a GroundTruth,
        target: &'a TargetSpec,
        names: &'a [String],
    ) -> PromptInputs<'a> {
        PromptInputs {
            task: TaskKind::Classification,
            image_ref: "img",
            overlay_ref: "ovl",
            prediction: pred,
            ground_truth: gt,
            target,
            label_set: names,
        }
    }

    #[test]
    fn classification_prompt_embeds_class_and_agreement() {
        let names = labels(&["tabby cat", "golden retriever"]);
        let pred = Prediction::classification("m", vec![0.2, 0.8]).unwrap();
        let gt = GroundTruth::label(1);
        let target = TargetSpec::class(1);
        let b = build_prompt(&cls_inputs(&pred, &gt, &target, &names), &any_ref).unwrap();
        assert!(b.stage_text(Stage::PredictionCheck).contains("golden retriever"));
        let s3 = b.stage_text(Stage::ReliabilityCheck);
        assert!(s3.contains("The prediction matches the ground truth."));
        assert_eq!(b.line_value(VERDICT_PREFIX), Some("match"));
        assert_eq!(b.line_value(PREDICTED_PREFIX), Some("golden retriever"));
        assert_eq!(b.image_refs().collect::<Vec<_>>(), vec!["img", "ovl"]);
        assert_eq!(b.stage_tags.iter().filter(|s| **s == Stage::PredictionCheck).count(), 1);
    }

    #[test]
    fn mismatch_is_stated() {
        let names = labels(&["tabby cat", "golden retriever"]);
        let pred = Prediction::classification("m", vec![0.2, 0.8]).unwrap();
        let gt = GroundTruth::label(0);
        let target = TargetSpec::class(1);
        let b = build_prompt(&cls_inputs(&pred, &gt, &target, &names), &any_ref).unwrap();
        let s3 = b.stage_text(Stage::ReliabilityCheck);
        assert!(s3.contains("does not match"));
        assert!(s3.contains("tabby cat"));
        assert_eq!(b.line_value(VERDICT_PREFIX), Some("mismatch"));
    }

    #[test]
    fn detection_prompt_embeds_box_and_class() {
        let names = labels(&["person", "dog"]);
        let bbox = BoundingBox::new(1.0, 2.0, 5.5, 6.0).unwrap();
        let det = Detection::new(bbox, vec![0.1, 0.9], 0.8).unwrap();
        let pred = Prediction::detection("m", vec![det]).unwrap();
        let target = TargetSpec::detection_of(&pred, 0).unwrap();
        let gt = GroundTruth::boxes(vec![GroundTruthBox { bbox, class_id: 1 }]);
        let inputs = PromptInputs {
            task: TaskKind::Detection,
            image_ref: "a",
            overlay_ref: "b",
            prediction: &pred,
            ground_truth: &gt,
            target: &target,
            label_set: &names,
        };
        let b = build_prompt(&inputs, &any_ref).unwrap();
        let s2 = b.stage_text(Stage::PredictionCheck);
        assert!(s2.contains("[1.0, 2.0, 5.5, 6.0]"));
        assert!(s2.contains("\"dog\""));
        assert_eq!(b.line_value(VERDICT_PREFIX), Some("match"));
    }

    #[test]
    fn deterministic() {
        let names = labels(&["a", "b"]);
        let pred = Prediction::classification("m", vec![0.6, 0.4]).unwrap();
        let gt = GroundTruth::label(0);
        let target = TargetSpec::class(0);
        let i = cls_inputs(&pred, &gt, &target, &names);
        let a = build_prompt(&i, &any_ref).unwrap();
        let b = build_prompt(&i, &any_ref).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn unresolvable_and_task_mismatch() {
        let names = labels(&["a", "b"]);
        let pred = Prediction::classification("m", vec![0.6, 0.4]).unwrap();
        let gt = GroundTruth::label(0);
        let target = TargetSpec::class(0);
        let i = cls_inputs(&pred, &gt, &target, &names);
        let none = |r: &str| r == "img";
        assert_eq!(
            build_prompt(&i, &none).unwrap_err(),
            PromptError::UnresolvableRef("ovl".into())
        );
        let seg_gt = GroundTruth::label_map(LabelMap::new(1, 1, vec![0]).unwrap());
        let i = cls_inputs(&pred, &seg_gt, &target, &names);
        assert!(matches!(build_prompt(&i, &any_ref), Err(PromptError::TaskMismatch(_))));
    }

    #[test]
    fn segmentation_verdict_uses_majority_under_prediction() {
        let pred =
            Prediction::segmentation("m", LabelMap::new(1, 4, vec![1, 1, 1, 0]).unwrap()).unwrap();
        let good = GroundTruth::label_map(LabelMap::new(1, 4, vec![1, 1, 0, 0]).unwrap());
        let bad = GroundTruth::label_map(LabelMap::new(1, 4, vec![0, 0, 1, 1]).unwrap());
        let t = TargetSpec::class(1);
        assert_eq!(verdict(&pred, &t, &good).unwrap(), Verdict::Match);
        assert_eq!(verdict(&pred, &t, &bad).unwrap(), Verdict::Mismatch);
        // class absent from the prediction never matches
        assert_eq!(verdict(&pred, &TargetSpec::class(2), &good).unwrap(), Verdict::Mismatch);
    }

    #[test]
    fn bundle_check_catches_bad_order() {
        let mut b = PromptBundle {
            task: TaskKind::Classification,
            template_id: "v1".into(),
            parts: vec![
                MessagePart::ImageRef { blob: "x".into() },
                MessagePart::Text { text: "a".into() },
                MessagePart::Text { text: "b".into() },
            ],
            stage_tags: vec![Stage::FocalAreas, Stage::ReliabilityCheck, Stage::PredictionCheck],
        };
        assert!(b.check().is_err());
        b.stage_tags.swap(1, 2);
        assert!(b.check().is_ok());
    }
}
