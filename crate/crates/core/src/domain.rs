//! Value types shared by every module.
//!
//! All types validate their invariants at construction and on
//! deserialization, and are immutable afterwards.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::Grid;

/// Tolerance on probability vectors summing to one.
pub const PROB_SUM_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DomainError {
    #[error("dimension mismatch: expected {expected} elements, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("value out of range at index {index}: {value}")]
    ValueOutOfRange { index: usize, value: f64 },
    #[error("unsupported channel count {0} (expected 1 or 3)")]
    UnsupportedChannels(usize),
    #[error("image dimensions must be positive")]
    EmptyImage,
    #[error("invalid bounding box ({x_min}, {y_min}, {x_max}, {y_max})")]
    InvalidBox {
        x_min: f64,
        y_min: f64,
        x_max: f64,
        y_max: f64,
    },
    #[error("invalid probability vector: {0}")]
    InvalidProbabilities(&'static str),
    #[error("objectness {0} outside [0,1]")]
    InvalidObjectness(f64),
    #[error("payload does not match task {0}")]
    TaskMismatch(TaskKind),
    #[error("prediction has no classes or detections")]
    EmptyPrediction,
    #[error("saliency value out of [0,1] or non-finite at index {0}")]
    InvalidSaliency(usize),
}

/// Vision task handled by a model, method or dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Classification,
    Segmentation,
    Detection,
}

impl TaskKind {
    pub const ALL: [TaskKind; 3] = [
        TaskKind::Classification,
        TaskKind::Segmentation,
        TaskKind::Detection,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TaskKind::Classification => "classification",
            TaskKind::Segmentation => "segmentation",
            TaskKind::Detection => "detection",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|t| t.as_str() == s)
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Attribution mechanism.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mechanism {
    Gradient,
    Perturbation,
}

/// Declared shape of a pixel buffer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PixelDims {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

impl PixelDims {
    pub fn new(height: usize, width: usize, channels: usize) -> Self {
        Self {
            height,
            width,
            channels,
        }
    }

    pub fn len(&self) -> usize {
        self.height * self.width * self.channels
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// A decoded, not yet validated pixel buffer.
#[derive(Debug, Clone, Copy)]
pub enum RawPixels<'a> {
    /// Integer intensities, expected in `[0, 255]`.
    Integer(&'a [i64]),
    /// 8-bit intensities.
    Bytes(&'a [u8]),
    /// Real intensities, expected finite and in `[0, 1]`.
    Real(&'a [f64]),
}

impl RawPixels<'_> {
    fn len(&self) -> usize {
        match self {
            RawPixels::Integer(v) => v.len(),
            RawPixels::Bytes(v) => v.len(),
            RawPixels::Real(v) => v.len(),
        }
    }
}

/// `H × W × C` image with intensities in `[0, 1]`, row-major, channels last.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ImageTensorRepr")]
pub struct ImageTensor {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

#[derive(Deserialize)]
struct ImageTensorRepr {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

impl TryFrom<ImageTensorRepr> for ImageTensor {
    type Error = DomainError;

    fn try_from(r: ImageTensorRepr) -> Result<Self, Self::Error> {
        ImageTensor::new(r.height, r.width, r.channels, r.data)
    }
}

/// Validates a decoded pixel buffer and converts it to an [`ImageTensor`].
///
/// Integer inputs are scaled by `1/255`; real inputs must already be in `[0, 1]`.
pub fn validate_image(raw: RawPixels<'_>, dims: PixelDims) -> Result<ImageTensor, DomainError> {
    if dims.height == 0 || dims.width == 0 {
        return Err(DomainError::EmptyImage);
    }
    if dims.channels != 1 && dims.channels != 3 {
        return Err(DomainError::UnsupportedChannels(dims.channels));
    }
    if raw.len() != dims.len() {
        return Err(DomainError::DimensionMismatch {
            expected: dims.len(),
            actual: raw.len(),
        });
    }
    let data = match raw {
        RawPixels::Integer(v) => v
            .iter()
            .enumerate()
            .map(|(index, &x)| {
                if (0..=255).contains(&x) {
                    Ok(x as f64 / 255.0)
                } else {
                    Err(DomainError::ValueOutOfRange {
                        index,
                        value: x as f64,
                    })
                }
            })
            .collect::<Result<Vec<_>, _>>()?,
        RawPixels::Bytes(v) => v.iter().map(|&x| x as f64 / 255.0).collect(),
        RawPixels::Real(v) => v.to_vec(),
    };
    ImageTensor::new(dims.height, dims.width, dims.channels, data)
}

impl ImageTensor {
    pub fn new(
        height: usize,
        width: usize,
        channels: usize,
        data: Vec<f64>,
    ) -> Result<Self, DomainError> {
        if height == 0 || width == 0 {
            return Err(DomainError::EmptyImage);
        }
        if channels != 1 && channels != 3 {
            return Err(DomainError::UnsupportedChannels(channels));
        }
        let expected = height * width * channels;
        if data.len() != expected {
            return Err(DomainError::DimensionMismatch {
                expected,
                actual: data.len(),
            });
        }
        if let Some((index, &value)) = data
            .iter()
            .enumerate()
            .find(|(_, v)| !v.is_finite() || **v < 0.0 || **v > 1.0)
        {
            return Err(DomainError::ValueOutOfRange { index, value });
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    /// Single-channel image from nested rows.
    pub fn from_gray_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self, DomainError> {
        let grid = Grid::from_rows(rows).ok_or(DomainError::DimensionMismatch {
            expected: rows.first().map_or(0, |r| r.as_ref().len()) * rows.len(),
            actual: rows.iter().map(|r| r.as_ref().len()).sum(),
        })?;
        Self::new(grid.height, grid.width, 1, grid.values)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn dims(&self) -> PixelDims {
        PixelDims::new(self.height, self.width, self.channels)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    /// Per-pixel mean over channels.
    pub fn luminance(&self) -> Grid {
        let c = self.channels;
        let values = self
            .data
            .chunks_exact(c)
            .map(|px| px.iter().sum::<f64>() / c as f64)
            .collect();
        Grid {
            height: self.height,
            width: self.width,
            values,
        }
    }

    /// Elementwise `I ⊙ M` with the mask broadcast over channels.
    ///
    /// `mask` must be `height × width` with values in `[0, 1]`.
    pub fn masked(&self, mask: &[f64]) -> Result<ImageTensor, DomainError> {
        if mask.len() != self.height * self.width {
            return Err(DomainError::DimensionMismatch {
                expected: self.height * self.width,
                actual: mask.len(),
            });
        }
        let c = self.channels;
        let data = self
            .data
            .iter()
            .enumerate()
            .map(|(i, &v)| v * mask[i / c])
            .collect();
        ImageTensor::new(self.height, self.width, self.channels, data)
    }
}

/// Axis-aligned half-open box in pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "BoxRepr")]
pub struct BoundingBox {
    x_min: f64,
    y_min: f64,
    x_max: f64,
    y_max: f64,
}

#[derive(Deserialize)]
struct BoxRepr {
    x_min: f64,
    y_min: f64,
    x_max: f64,
    y_max: f64,
}

impl TryFrom<BoxRepr> for BoundingBox {
    type Error = DomainError;

    fn try_from(r: BoxRepr) -> Result<Self, Self::Error> {
        BoundingBox::new(r.x_min, r.y_min, r.x_max, r.y_max)
    }
}

impl BoundingBox {
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Result<Self, DomainError> {
        let all_finite = [x_min, y_min, x_max, y_max].iter().all(|v| v.is_finite());
        if !all_finite || x_min < 0.0 || y_min < 0.0 || x_min >= x_max || y_min >= y_max {
            return Err(DomainError::InvalidBox {
                x_min,
                y_min,
                x_max,
                y_max,
            });
        }
        Ok(Self {
            x_min,
            y_min,
            x_max,
            y_max,
        })
    }

    pub fn x_min(&self) -> f64 {
        self.x_min
    }

    pub fn y_min(&self) -> f64 {
        self.y_min
    }

    pub fn x_max(&self) -> f64 {
        self.x_max
    }

    pub fn y_max(&self) -> f64 {
        self.y_max
    }

    pub fn area(&self) -> f64 {
        (self.x_max - self.x_min) * (self.y_max - self.y_min)
    }

    pub fn intersection_area(&self, other: &BoundingBox) -> f64 {
        let w = self.x_max.min(other.x_max) - self.x_min.max(other.x_min);
        let h = self.y_max.min(other.y_max) - self.y_min.max(other.y_min);
        if w <= 0.0 || h <= 0.0 {
            0.0
        } else {
            w * h
        }
    }

    /// Coordinates as `[x_min, y_min, x_max, y_max]`.
    pub fn to_array(&self) -> [f64; 4] {
        [self.x_min, self.y_min, self.x_max, self.y_max]
    }
}

/// Intersection over union of two boxes; `0` when disjoint.
pub fn iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    if a == b {
        return 1.0;
    }
    let inter = a.intersection_area(b);
    if inter == 0.0 {
        return 0.0;
    }
    let union = a.area() + b.area() - inter;
    (inter / union).clamp(0.0, 1.0)
}

fn check_probabilities(p: &[f64]) -> Result<(), DomainError> {
    if p.is_empty() {
        return Err(DomainError::InvalidProbabilities("empty"));
    }
    if p.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(DomainError::InvalidProbabilities(
            "entries must be finite and non-negative",
        ));
    }
    let sum: f64 = p.iter().sum();
    if (sum - 1.0).abs() > PROB_SUM_TOLERANCE {
        return Err(DomainError::InvalidProbabilities("entries must sum to 1"));
    }
    Ok(())
}

/// One detector output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "DetectionRepr")]
pub struct Detection {
    #[serde(rename = "box")]
    bbox: BoundingBox,
    class_probs: Vec<f64>,
    objectness: f64,
}

#[derive(Deserialize)]
struct DetectionRepr {
    #[serde(rename = "box")]
    bbox: BoundingBox,
    class_probs: Vec<f64>,
    objectness: f64,
}

impl TryFrom<DetectionRepr> for Detection {
    type Error = DomainError;

    fn try_from(r: DetectionRepr) -> Result<Self, Self::Error> {
        Detection::new(r.bbox, r.class_probs, r.objectness)
    }
}

impl Detection {
    pub fn new(
        bbox: BoundingBox,
        class_probs: Vec<f64>,
        objectness: f64,
    ) -> Result<Self, DomainError> {
        check_probabilities(&class_probs)?;
        if !(0.0..=1.0).contains(&objectness) {
            return Err(DomainError::InvalidObjectness(objectness));
        }
        Ok(Self {
            bbox,
            class_probs,
            objectness,
        })
    }

    pub fn bbox(&self) -> &BoundingBox {
        &self.bbox
    }

    pub fn class_probs(&self) -> &[f64] {
        &self.class_probs
    }

    pub fn objectness(&self) -> f64 {
        self.objectness
    }

    pub fn top_class(&self) -> usize {
        argmax(&self.class_probs).unwrap_or(0)
    }
}

/// `H × W` grid of class ids.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "LabelMapRepr")]
pub struct LabelMap {
    height: usize,
    width: usize,
    labels: Vec<u32>,
}

#[derive(Deserialize)]
struct LabelMapRepr {
    height: usize,
    width: usize,
    labels: Vec<u32>,
}

impl TryFrom<LabelMapRepr> for LabelMap {
    type Error = DomainError;

    fn try_from(r: LabelMapRepr) -> Result<Self, Self::Error> {
        LabelMap::new(r.height, r.width, r.labels)
    }
}

impl LabelMap {
    pub fn new(height: usize, width: usize, labels: Vec<u32>) -> Result<Self, DomainError> {
        if height == 0 || width == 0 {
            return Err(DomainError::EmptyImage);
        }
        if labels.len() != height * width {
            return Err(DomainError::DimensionMismatch {
                expected: height * width,
                actual: labels.len(),
            });
        }
        Ok(Self {
            height,
            width,
            labels,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> u32 {
        self.labels[y * self.width + x]
    }

    /// Number of pixels carrying `class_id`.
    pub fn count(&self, class_id: u32) -> usize {
        self.labels.iter().filter(|&&l| l == class_id).count()
    }

    /// Most frequent label; ties go to the lowest id.
    pub fn majority(&self) -> u32 {
        majority_label(self.labels.iter().copied()).unwrap_or(0)
    }
}

pub(crate) fn majority_label(labels: impl Iterator<Item = u32>) -> Option<u32> {
    let mut counts: alloc::collections::BTreeMap<u32, usize> = Default::default();
    for l in labels {
        *counts.entry(l).or_default() += 1;
    }
    // BTreeMap iterates ascending, so `>` keeps the lowest id on ties.
    let mut best: Option<(u32, usize)> = None;
    for (l, c) in counts {
        if best.is_none_or(|(_, bc)| c > bc) {
            best = Some((l, c));
        }
    }
    best.map(|(l, _)| l)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PredictionPayload {
    ClassProbs { class_probs: Vec<f64> },
    LabelMap { label_map: LabelMap },
    Detections { detections: Vec<Detection> },
}

impl PredictionPayload {
    fn task(&self) -> TaskKind {
        match self {
            PredictionPayload::ClassProbs { .. } => TaskKind::Classification,
            PredictionPayload::LabelMap { .. } => TaskKind::Segmentation,
            PredictionPayload::Detections { .. } => TaskKind::Detection,
        }
    }
}

/// Task-tagged model output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PredictionRepr")]
pub struct Prediction {
    task: TaskKind,
    payload: PredictionPayload,
    model_id: String,
}

#[derive(Deserialize)]
struct PredictionRepr {
    task: TaskKind,
    payload: PredictionPayload,
    model_id: String,
}

impl TryFrom<PredictionRepr> for Prediction {
    type Error = DomainError;

    fn try_from(r: PredictionRepr) -> Result<Self, Self::Error> {
        Prediction::new(r.task, r.payload, r.model_id)
    }
}

impl Prediction {
    pub fn new(
        task: TaskKind,
        payload: PredictionPayload,
        model_id: impl Into<String>,
    ) -> Result<Self, DomainError> {
        if payload.task() != task {
            return Err(DomainError::TaskMismatch(task));
        }
        if let PredictionPayload::ClassProbs { class_probs } = &payload {
            check_probabilities(class_probs)?;
        }
        Ok(Self {
            task,
            payload,
            model_id: model_id.into(),
        })
    }

    pub fn classification(
        model_id: impl Into<String>,
        class_probs: Vec<f64>,
    ) -> Result<Self, DomainError> {
        Self::new(
            TaskKind::Classification,
            PredictionPayload::ClassProbs { class_probs },
            model_id,
        )
    }

    pub fn segmentation(model_id: impl Into<String>, label_map: LabelMap) -> Result<Self, DomainError> {
        Self::new(
            TaskKind::Segmentation,
            PredictionPayload::LabelMap { label_map },
            model_id,
        )
    }

    pub fn detection(
        model_id: impl Into<String>,
        detections: Vec<Detection>,
    ) -> Result<Self, DomainError> {
        Self::new(
            TaskKind::Detection,
            PredictionPayload::Detections { detections },
            model_id,
        )
    }

    pub fn task(&self) -> TaskKind {
        self.task
    }

    pub fn payload(&self) -> &PredictionPayload {
        &self.payload
    }

    pub fn model_id(&self) -> &str {
        &self.model_id
    }

    pub fn class_probs(&self) -> Option<&[f64]> {
        match &self.payload {
            PredictionPayload::ClassProbs { class_probs } => Some(class_probs),
            _ => None,
        }
    }

    pub fn label_map(&self) -> Option<&LabelMap> {
        match &self.payload {
            PredictionPayload::LabelMap { label_map } => Some(label_map),
            _ => None,
        }
    }

    pub fn detections(&self) -> Option<&[Detection]> {
        match &self.payload {
            PredictionPayload::Detections { detections } => Some(detections),
            _ => None,
        }
    }

    /// Checks that a segmentation label map matches the source image size.
    pub fn check_against(&self, image: &ImageTensor) -> Result<(), DomainError> {
        if let Some(map) = self.label_map() {
            if map.height != image.height || map.width != image.width {
                return Err(DomainError::DimensionMismatch {
                    expected: image.height * image.width,
                    actual: map.height * map.width,
                });
            }
        }
        Ok(())
    }
}

/// Result of [`top1`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Top1 {
    /// Argmax class (classification) or majority label (segmentation).
    Class(usize),
    /// Argmax class of every detection, in detection order.
    PerDetection(Vec<usize>),
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &v) in values.iter().enumerate() {
        if best.is_none_or(|(_, b)| v > b) {
            best = Some((i, v));
        }
    }
    best.map(|(i, _)| i)
}

/// Top-1 label of a prediction.
///
/// For segmentation the majority label of the map is reported.
pub fn top1(pred: &Prediction) -> Result<Top1, DomainError> {
    match &pred.payload {
        PredictionPayload::ClassProbs { class_probs } => argmax(class_probs)
            .map(Top1::Class)
            .ok_or(DomainError::EmptyPrediction),
        PredictionPayload::LabelMap { label_map } => {
            Ok(Top1::Class(label_map.majority() as usize))
        }
        PredictionPayload::Detections { detections } => {
            if detections.is_empty() {
                return Err(DomainError::EmptyPrediction);
            }
            Ok(Top1::PerDetection(
                detections.iter().map(Detection::top_class).collect(),
            ))
        }
    }
}

/// What a saliency map explains.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TargetSpec {
    Class {
        class_id: usize,
    },
    Detection {
        detection_index: usize,
        detection: Detection,
    },
}

impl TargetSpec {
    pub fn class(class_id: usize) -> Self {
        TargetSpec::Class { class_id }
    }

    /// Target the `index`-th detection of `pred`.
    pub fn detection_of(pred: &Prediction, index: usize) -> Option<Self> {
        let det = pred.detections()?.get(index)?.clone();
        Some(TargetSpec::Detection {
            detection_index: index,
            detection: det,
        })
    }

    pub fn class_id(&self) -> Option<usize> {
        match self {
            TargetSpec::Class { class_id } => Some(*class_id),
            TargetSpec::Detection { .. } => None,
        }
    }
}

/// `H × W` relevance grid in `[0, 1]` with provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SaliencyMapRepr")]
pub struct SaliencyMap {
    height: usize,
    width: usize,
    values: Vec<f64>,
    method_id: String,
    target: TargetSpec,
    mechanism: Mechanism,
}

#[derive(Deserialize)]
struct SaliencyMapRepr {
    height: usize,
    width: usize,
    values: Vec<f64>,
    method_id: String,
    target: TargetSpec,
    mechanism: Mechanism,
}

impl TryFrom<SaliencyMapRepr> for SaliencyMap {
    type Error = DomainError;

    fn try_from(r: SaliencyMapRepr) -> Result<Self, Self::Error> {
        let grid = Grid::from_vec(r.height, r.width, r.values).ok_or(
            DomainError::DimensionMismatch {
                expected: r.height * r.width,
                actual: 0,
            },
        )?;
        SaliencyMap::new(grid, r.method_id, r.target, r.mechanism)
    }
}

impl SaliencyMap {
    pub fn new(
        grid: Grid,
        method_id: impl Into<String>,
        target: TargetSpec,
        mechanism: Mechanism,
    ) -> Result<Self, DomainError> {
        if grid.height == 0 || grid.width == 0 {
            return Err(DomainError::EmptyImage);
        }
        if let Some(i) = grid
            .values
            .iter()
            .position(|v| !v.is_finite() || *v < 0.0 || *v > 1.0)
        {
            return Err(DomainError::InvalidSaliency(i));
        }
        Ok(Self {
            height: grid.height,
            width: grid.width,
            values: grid.values,
            method_id: method_id.into(),
            target,
            mechanism,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> f64 {
        self.values[y * self.width + x]
    }

    pub fn method_id(&self) -> &str {
        &self.method_id
    }

    pub fn target(&self) -> &TargetSpec {
        &self.target
    }

    pub fn mechanism(&self) -> Mechanism {
        self.mechanism
    }

    pub fn to_grid(&self) -> Grid {
        Grid {
            height: self.height,
            width: self.width,
            values: self.values.clone(),
        }
    }
}

/// Annotated object: a box and its class id (objectness is implicitly 1).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthBox {
    #[serde(rename = "box")]
    pub bbox: BoundingBox,
    pub class_id: usize,
}

impl GroundTruthBox {
    /// The box as a detection with a one-hot class vector and objectness 1.
    pub fn to_detection(&self, num_classes: usize) -> Result<Detection, DomainError> {
        if self.class_id >= num_classes {
            return Err(DomainError::InvalidProbabilities("class id outside label set"));
        }
        let mut probs = alloc::vec![0.0; num_classes];
        probs[self.class_id] = 1.0;
        Detection::new(self.bbox, probs, 1.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GroundTruthPayload {
    Label { class_id: usize },
    LabelMap { label_map: LabelMap },
    Boxes { boxes: Vec<GroundTruthBox> },
}

impl GroundTruthPayload {
    fn task(&self) -> TaskKind {
        match self {
            GroundTruthPayload::Label { .. } => TaskKind::Classification,
            GroundTruthPayload::LabelMap { .. } => TaskKind::Segmentation,
            GroundTruthPayload::Boxes { .. } => TaskKind::Detection,
        }
    }
}

/// Annotated correct answer for an image, supplied by the caller.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GroundTruthRepr")]
pub struct GroundTruth {
    task: TaskKind,
    payload: GroundTruthPayload,
}

#[derive(Deserialize)]
struct GroundTruthRepr {
    task: TaskKind,
    payload: GroundTruthPayload,
}

impl TryFrom<GroundTruthRepr> for GroundTruth {
    type Error = DomainError;

    fn try_from(r: GroundTruthRepr) -> Result<Self, Self::Error> {
        GroundTruth::new(r.task, r.payload)
    }
}

impl GroundTruth {
    pub fn new(task: TaskKind, payload: GroundTruthPayload) -> Result<Self, DomainError> {
        if payload.task() != task {
            return Err(DomainError::TaskMismatch(task));
        }
        Ok(Self { task, payload })
    }

    pub fn label(class_id: usize) -> Self {
        Self {
            task: TaskKind::Classification,
            payload: GroundTruthPayload::Label { class_id },
        }
    }

    pub fn label_map(label_map: LabelMap) -> Self {
        Self {
            task: TaskKind::Segmentation,
            payload: GroundTruthPayload::LabelMap { label_map },
        }
    }

    pub fn boxes(boxes: Vec<GroundTruthBox>) -> Self {
        Self {
            task: TaskKind::Detection,
            payload: GroundTruthPayload::Boxes { boxes },
        }
    }

    pub fn task(&self) -> TaskKind {
        self.task
    }

    pub fn payload(&self) -> &GroundTruthPayload {
        &self.payload
    }
}
