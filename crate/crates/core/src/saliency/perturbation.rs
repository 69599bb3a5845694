//! Perturbation-mechanism attribution: RISE and D-RISE.
//!
//! Occlusion is multiplicative toward black: the model sees `I ⊙ M` with
//! the mask broadcast over channels. Scoring is split from accumulation so
//! callers can fan scoring out over workers and still accumulate in mask
//! order, which keeps results bit-identical regardless of scheduling.

use alloc::format;
use alloc::vec::Vec;
use core::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::gradient::{normalize_map, upsample_map};
use super::SaliencyError;
use crate::domain::{iou, Detection, ImageTensor, Mechanism, SaliencyMap, TargetSpec, TaskKind};
use crate::grid::Grid;
use crate::model::{check_target, checked_predict, validate_prediction, ModelRegistry, VisionModel};

pub const RISE: &str = "rise";
pub const D_RISE: &str = "d_rise";

/// Default number of masked images scored per `predict_batch` call.
pub const DEFAULT_BATCH_SIZE: usize = 32;

/// Largest grid accepted by [`enumerate_masks`].
pub const MAX_ENUMERATED_CELLS: usize = 16;

/// How a [`MaskSet`] was produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskOrigin {
    Sampled,
    Enumerated,
    Custom,
}

/// `N` masks of size `H × W` with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskSet {
    pub height: usize,
    pub width: usize,
    pub grid: (usize, usize),
    pub keep_prob: f64,
    pub seed: u64,
    pub origin: MaskOrigin,
    /// Row-major masks laid out back to back (`N · H · W` values).
    values: Vec<f64>,
}

impl MaskSet {
    /// Wraps explicit masks. Every mask must be `height × width` with values in `[0, 1]`.
    pub fn from_masks(masks: &[Grid], keep_prob: f64) -> Result<Self, SaliencyError> {
        let first = masks
            .first()
            .ok_or_else(|| SaliencyError::InvalidParameter("mask set is empty".into()))?;
        let (height, width) = (first.height, first.width);
        let mut values = Vec::with_capacity(masks.len() * height * width);
        for m in masks {
            if m.height != height || m.width != width || m.len() != height * width {
                return Err(SaliencyError::ShapeMismatch("masks differ in size".into()));
            }
            values.extend_from_slice(&m.values);
        }
        Self::from_parts(
            height,
            width,
            (height, width),
            keep_prob,
            0,
            MaskOrigin::Custom,
            values,
        )
    }

    /// Rebuilds a mask set from its serialized parts, re-checking invariants.
    pub fn from_parts(
        height: usize,
        width: usize,
        grid: (usize, usize),
        keep_prob: f64,
        seed: u64,
        origin: MaskOrigin,
        values: Vec<f64>,
    ) -> Result<Self, SaliencyError> {
        let plane = height * width;
        if plane == 0 || values.is_empty() || !values.len().is_multiple_of(plane) {
            return Err(SaliencyError::ShapeMismatch(format!(
                "{} values do not form {height}x{width} masks",
                values.len()
            )));
        }
        if !(keep_prob > 0.0 && keep_prob <= 1.0) {
            return Err(SaliencyError::InvalidParameter(format!("keep_prob {keep_prob}")));
        }
        if values.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(SaliencyError::InvalidParameter("mask value outside [0,1]".into()));
        }
        Ok(Self {
            height,
            width,
            grid,
            keep_prob,
            seed,
            origin,
            values,
        })
    }

    pub fn len(&self) -> usize {
        self.values.len() / (self.height * self.width)
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn mask(&self, i: usize) -> &[f64] {
        let plane = self.height * self.width;
        &self.values[i * plane..(i + 1) * plane]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks_exact(self.height * self.width)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Mean of all mask values.
    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }
}

/// Samples `n` RISE masks for an `out = (H, W)` image.
///
/// Each mask is an `h × w` Bernoulli(`keep_prob`) grid, bilinearly upsampled
/// to `(H + ⌈H/h⌉, W + ⌈W/w⌉)` and cropped to `H × W` at a uniformly random
/// offset in `[0, ⌈H/h⌉) × [0, ⌈W/w⌉)`. The output depends only on the
/// arguments.
pub fn generate_masks(
    n: usize,
    grid: (usize, usize),
    keep_prob: f64,
    out: (usize, usize),
    seed: u64,
) -> Result<MaskSet, SaliencyError> {
    let (gh, gw) = grid;
    let (oh, ow) = out;
    if n == 0 {
        return Err(SaliencyError::InvalidParameter("mask count must be >= 1".into()));
    }
    if !(keep_prob > 0.0 && keep_prob < 1.0) {
        return Err(SaliencyError::InvalidParameter(format!(
            "keep probability {keep_prob} not in (0, 1)"
        )));
    }
    if gh == 0 || gw == 0 || gh > oh || gw > ow {
        return Err(SaliencyError::InvalidParameter(format!(
            "grid {gh}x{gw} must be non-empty and fit in {oh}x{ow}"
        )));
    }
    let cell_h = oh.div_ceil(gh);
    let cell_w = ow.div_ceil(gw);
    let up = (oh + cell_h, ow + cell_w);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut values = Vec::with_capacity(n * oh * ow);
    let mut cells = Grid::zeros(gh, gw);
    for _ in 0..n {
        for v in cells.values.iter_mut() {
            *v = if rng.random::<f64>() < keep_prob { 1.0 } else { 0.0 };
        }
        let big = upsample_map(&cells, up)?;
        let dy = rng.random_range(0..cell_h);
        let dx = rng.random_range(0..cell_w);
        for y in 0..oh {
            let row = (y + dy) * big.width + dx;
            values.extend_from_slice(&big.values[row..row + ow]);
        }
    }
    MaskSet::from_parts(oh, ow, grid, keep_prob, seed, MaskOrigin::Sampled, values)
}

/// All `2^(h·w)` binary masks at grid resolution, no upsampling or shift.
///
/// Mask `k` switches on cell `j` (row-major) when bit `h·w − 1 − j` of `k`
/// is set, so a `2 × 1` grid yields `00, 01, 10, 11`.
pub fn enumerate_masks(grid: (usize, usize)) -> Result<MaskSet, SaliencyError> {
    let (h, w) = grid;
    let cells = h * w;
    if cells == 0 {
        return Err(SaliencyError::InvalidParameter("grid must be non-empty".into()));
    }
    if cells > MAX_ENUMERATED_CELLS {
        return Err(SaliencyError::TooLarge { cells });
    }
    let count = 1usize << cells;
    let mut values = Vec::with_capacity(count * cells);
    for k in 0..count {
        for j in 0..cells {
            let bit = (k >> (cells - 1 - j)) & 1;
            values.push(bit as f64);
        }
    }
    MaskSet::from_parts(h, w, grid, 0.5, 0, MaskOrigin::Enumerated, values)
}

fn check_masks(image: &ImageTensor, masks: &MaskSet) -> Result<(), SaliencyError> {
    if masks.height != image.height() || masks.width != image.width() {
        return Err(SaliencyError::ShapeMismatch(format!(
            "masks are {}x{}, image is {}x{}",
            masks.height,
            masks.width,
            image.height(),
            image.width()
        )));
    }
    Ok(())
}

fn masked_batch(
    image: &ImageTensor,
    masks: &MaskSet,
    range: Range<usize>,
) -> Result<Vec<ImageTensor>, SaliencyError> {
    range
        .map(|i| image.masked(masks.mask(i)).map_err(SaliencyError::from))
        .collect()
}

fn adapter_err(model: &dyn VisionModel, e: crate::model::AdapterError) -> SaliencyError {
    SaliencyError::Model(crate::model::ModelError::AdapterFailure {
        model_id: model.descriptor().model_id.clone(),
        source: e,
    })
}

/// Scalar score a RISE target assigns to one model output.
#[derive(Debug, Clone)]
pub enum RiseTarget {
    /// Probability of `class_id`.
    Class { class_id: usize },
    /// Mean probability of `class_id` over a fixed pixel region.
    Region { class_id: usize, pixels: Vec<usize> },
}

impl RiseTarget {
    /// Resolves a target for `model` on the unmasked `image`.
    ///
    /// For segmentation the region is the set of pixels the model assigns
    /// to the target class on the unmasked image; an empty region is an
    /// invalid target.
    pub fn resolve(
        model: &dyn VisionModel,
        image: &ImageTensor,
        target: &TargetSpec,
    ) -> Result<Self, SaliencyError> {
        let desc = model.descriptor();
        check_target(desc, target).map_err(|_| SaliencyError::TargetInvalid)?;
        let class_id = target.class_id().ok_or(SaliencyError::TargetInvalid)?;
        match desc.task {
            TaskKind::Classification => Ok(RiseTarget::Class { class_id }),
            TaskKind::Segmentation => {
                let pred = checked_predict(model, image)?;
                let map = pred.label_map().ok_or(SaliencyError::TargetInvalid)?;
                let pixels: Vec<usize> = map
                    .labels()
                    .iter()
                    .enumerate()
                    .filter(|(_, &l)| l as usize == class_id)
                    .map(|(i, _)| i)
                    .collect();
                if pixels.is_empty() {
                    return Err(SaliencyError::TargetInvalid);
                }
                Ok(RiseTarget::Region { class_id, pixels })
            }
            TaskKind::Detection => Err(SaliencyError::TargetInvalid),
        }
    }
}

/// Scores `f_target(I ⊙ M_i)` for the masks in `range`, `batch_size` images at a time.
pub fn rise_scores(
    model: &dyn VisionModel,
    image: &ImageTensor,
    target: &RiseTarget,
    masks: &MaskSet,
    range: Range<usize>,
    batch_size: usize,
) -> Result<Vec<f64>, SaliencyError> {
    check_masks(image, masks)?;
    let batch_size = batch_size.max(1);
    let mut scores = Vec::with_capacity(range.len());
    let mut start = range.start;
    while start < range.end {
        let end = (start + batch_size).min(range.end);
        let batch = masked_batch(image, masks, start..end)?;
        match target {
            RiseTarget::Class { class_id } => {
                let preds = model
                    .predict_batch(&batch)
                    .map_err(|e| adapter_err(model, e))?;
                for (img, p) in batch.iter().zip(&preds) {
                    validate_prediction(model.descriptor(), img, p)
                        .map_err(|e| adapter_err(model, e.into()))?;
                    let probs = p.class_probs().ok_or(SaliencyError::TargetInvalid)?;
                    scores.push(*probs.get(*class_id).ok_or(SaliencyError::TargetInvalid)?);
                }
            }
            RiseTarget::Region { class_id, pixels } => {
                for img in &batch {
                    let planes = model
                        .pixel_probabilities(img)
                        .map_err(|e| adapter_err(model, e))?;
                    let plane = planes.get(*class_id).ok_or(SaliencyError::TargetInvalid)?;
                    let total: f64 = pixels.iter().map(|&i| plane.values[i]).sum();
                    scores.push(total / pixels.len() as f64);
                }
            }
        }
        start = end;
    }
    Ok(scores)
}

/// `Σ_i w_i M_i · scale`, accumulated in mask order.
pub fn accumulate(masks: &MaskSet, weights: &[f64], scale: f64) -> Result<Grid, SaliencyError> {
    if weights.len() != masks.len() {
        return Err(SaliencyError::ShapeMismatch(format!(
            "{} weights for {} masks",
            weights.len(),
            masks.len()
        )));
    }
    let mut acc = Grid::zeros(masks.height, masks.width);
    for (mask, &w) in masks.iter().zip(weights) {
        if w == 0.0 {
            continue;
        }
        for (a, &m) in acc.values.iter_mut().zip(mask) {
            *a += w * m;
        }
    }
    if scale != 1.0 {
        acc.values.iter_mut().for_each(|v| *v *= scale);
    }
    Ok(acc)
}

/// RISE estimator `(1/(N·p)) Σ_i s_i M_i` before normalization.
pub fn rise_raw(masks: &MaskSet, scores: &[f64]) -> Result<Grid, SaliencyError> {
    let scale = 1.0 / (masks.len() as f64 * masks.keep_prob);
    accumulate(masks, scores, scale)
}

/// Builds a normalized saliency map from accumulated relevance.
pub fn finish_map(
    raw: &Grid,
    method_id: &str,
    target: &TargetSpec,
) -> Result<SaliencyMap, SaliencyError> {
    let norm = normalize_map(raw)?;
    Ok(SaliencyMap::new(
        norm,
        method_id,
        target.clone(),
        Mechanism::Perturbation,
    )?)
}

/// RISE saliency for a classification or segmentation target.
pub fn rise(
    registry: &ModelRegistry,
    model_id: &str,
    image: &ImageTensor,
    target: &TargetSpec,
    masks: &MaskSet,
    batch_size: usize,
) -> Result<SaliencyMap, SaliencyError> {
    let model = registry.get(model_id)?;
    check_masks(image, masks)?;
    let resolved = RiseTarget::resolve(model.as_ref(), image, target)?;
    let scores = rise_scores(model.as_ref(), image, &resolved, masks, 0..masks.len(), batch_size)?;
    finish_map(&rise_raw(masks, &scores)?, RISE, target)
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = libm::sqrt(a.iter().map(|x| x * x).sum());
    let nb = libm::sqrt(b.iter().map(|x| x * x).sum());
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// D-RISE pairing score `IoU × cos(class_probs) × objectness`, in `[0, 1]`.
pub fn detection_similarity(target: &Detection, proposal: &Detection) -> Result<f64, SaliencyError> {
    let (a, b) = (target.class_probs(), proposal.class_probs());
    if a.len() != b.len() {
        return Err(SaliencyError::LengthMismatch(a.len(), b.len()));
    }
    let s = iou(target.bbox(), proposal.bbox()) * cosine(a, b) * proposal.objectness();
    Ok(s.clamp(0.0, 1.0))
}

/// D-RISE mask weights: best pairing score of any proposal on each masked image.
pub fn d_rise_weights(
    model: &dyn VisionModel,
    image: &ImageTensor,
    target: &Detection,
    masks: &MaskSet,
    range: Range<usize>,
    batch_size: usize,
) -> Result<Vec<f64>, SaliencyError> {
    check_masks(image, masks)?;
    let batch_size = batch_size.max(1);
    let mut weights = Vec::with_capacity(range.len());
    let mut start = range.start;
    while start < range.end {
        let end = (start + batch_size).min(range.end);
        let batch = masked_batch(image, masks, start..end)?;
        let preds = model
            .predict_batch(&batch)
            .map_err(|e| adapter_err(model, e))?;
        for (img, p) in batch.iter().zip(&preds) {
            validate_prediction(model.descriptor(), img, p)
                .map_err(|e| adapter_err(model, e.into()))?;
            let dets = p.detections().ok_or(SaliencyError::TargetInvalid)?;
            let mut best = 0.0f64;
            for d in dets {
                best = best.max(detection_similarity(target, d)?);
            }
            weights.push(best);
        }
        start = end;
    }
    Ok(weights)
}

/// Extracts the target detection from a detection target spec.
pub fn detection_target<'a>(
    registry: &ModelRegistry,
    model_id: &str,
    target: &'a TargetSpec,
) -> Result<&'a Detection, SaliencyError> {
    let desc = registry.descriptor(model_id)?;
    if desc.task != TaskKind::Detection {
        return Err(SaliencyError::TargetInvalid);
    }
    check_target(desc, target).map_err(|_| SaliencyError::TargetInvalid)?;
    match target {
        TargetSpec::Detection { detection, .. } => Ok(detection),
        TargetSpec::Class { .. } => Err(SaliencyError::TargetInvalid),
    }
}

/// D-RISE saliency for one target detection.
pub fn d_rise(
    registry: &ModelRegistry,
    model_id: &str,
    image: &ImageTensor,
    target: &TargetSpec,
    masks: &MaskSet,
    batch_size: usize,
) -> Result<SaliencyMap, SaliencyError> {
    let det = detection_target(registry, model_id, target)?;
    let model = registry.get(model_id)?;
    let weights = d_rise_weights(model.as_ref(), image, det, masks, 0..masks.len(), batch_size)?;
    finish_map(&accumulate(masks, &weights, 1.0)?, D_RISE, target)
}

/// Parameters for the perturbation methods.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PerturbationParams {
    pub n_masks: usize,
    pub grid: (usize, usize),
    pub keep_prob: f64,
    pub seed: u64,
    pub batch_size: usize,
}

impl Default for PerturbationParams {
    fn default() -> Self {
        Self {
            n_masks: 4000,
            grid: (7, 7),
            keep_prob: 0.5,
            seed: 0,
            batch_size: DEFAULT_BATCH_SIZE,
        }
    }
}

impl PerturbationParams {
    /// The grid clamped to the image so small inputs remain valid.
    pub fn grid_for(&self, out: (usize, usize)) -> (usize, usize) {
        (self.grid.0.min(out.0).max(1), self.grid.1.min(out.1).max(1))
    }

    pub fn masks_for(&self, out: (usize, usize)) -> Result<MaskSet, SaliencyError> {
        generate_masks(self.n_masks, self.grid_for(out), self.keep_prob, out, self.seed)
    }
}

impl core::fmt::Display for MaskOrigin {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        let s = match self {
            MaskOrigin::Sampled => "sampled",
            MaskOrigin::Enumerated => "enumerated",
            MaskOrigin::Custom => "custom",
        };
        f.write_str(s)
    }
}

impl MaskOrigin {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "sampled" => Some(MaskOrigin::Sampled),
            "enumerated" => Some(MaskOrigin::Enumerated),
            "custom" => Some(MaskOrigin::Custom),
            _ => None,
        }
    }
}
