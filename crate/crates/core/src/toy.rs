//! Analytic toy models.
//!
//! Each toy works on luminance (the per-pixel channel mean) at any input
//! resolution, so outputs and gradients have closed forms that tests can
//! compute by hand. Gradient-capable toys use the luminance grid itself as
//! their single feature map.
//!
//! Column `x` of a `W`-wide image lies in the left half when `2x + 1 < W`
//! and in the right half when `2x + 1 > W`; the middle column of an
//! odd-width image belongs to neither.

use alloc::string::{String, ToString};
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use crate::domain::{
    BoundingBox, Detection, ImageTensor, LabelMap, Prediction, TargetSpec, TaskKind,
};
use crate::grid::Grid;
use crate::model::{softmax, AdapterError, FeatureBundle, ModelDescriptor, ModelRegistry, VisionModel};

pub const REGION_SCORER: &str = "toy_region_scorer";
pub const IDENTITY_CONV: &str = "toy_identity_conv";
pub const BOX_DETECTOR: &str = "toy_box_detector";
pub const THRESHOLD_SEGMENTER: &str = "toy_threshold_segmenter";

const LAYER: &str = "input_luminance";
const NOMINAL_SIZE: (usize, usize) = (8, 8);

fn labels(names: &[&str]) -> Vec<String> {
    names.iter().map(|s| s.to_string()).collect()
}

/// Which half of the image column `x` belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Half {
    Left,
    Right,
    Middle,
}

pub fn column_half(x: usize, width: usize) -> Half {
    match (2 * x + 1).cmp(&width) {
        core::cmp::Ordering::Less => Half::Left,
        core::cmp::Ordering::Greater => Half::Right,
        core::cmp::Ordering::Equal => Half::Middle,
    }
}

/// Sums of luminance over the left and right halves.
pub fn half_sums(lum: &Grid) -> (f64, f64) {
    let (mut left, mut right) = (0.0, 0.0);
    for y in 0..lum.height {
        for x in 0..lum.width {
            match column_half(x, lum.width) {
                Half::Left => left += lum.get(y, x),
                Half::Right => right += lum.get(y, x),
                Half::Middle => {}
            }
        }
    }
    (left, right)
}

fn region_indicator(height: usize, width: usize, half: Half) -> Grid {
    let mut g = Grid::zeros(height, width);
    for y in 0..height {
        for x in 0..width {
            if column_half(x, width) == half {
                g.set(y, x, 1.0);
            }
        }
    }
    g
}

fn class_target(target: &TargetSpec, classes: usize) -> Result<usize, AdapterError> {
    match target {
        TargetSpec::Class { class_id } if *class_id < classes => Ok(*class_id),
        _ => Err(AdapterError::TargetInvalid),
    }
}

/// Classifier with logits `[Σ left-half luminance, Σ right-half luminance]`.
#[derive(Debug, Clone)]
pub struct RegionScorer {
    desc: ModelDescriptor,
}

impl RegionScorer {
    pub fn new() -> Self {
        Self {
            desc: ModelDescriptor {
                model_id: REGION_SCORER.to_string(),
                task: TaskKind::Classification,
                label_set: labels(&["left", "right"]),
                supports_gradients: true,
                input_size: NOMINAL_SIZE,
                explanation_layer: LAYER.to_string(),
                serialized: false,
            },
        }
    }

    pub fn logits(image: &ImageTensor) -> [f64; 2] {
        let (l, r) = half_sums(&image.luminance());
        [l, r]
    }
}

impl Default for RegionScorer {
    fn default() -> Self {
        Self::new()
    }
}

impl VisionModel for RegionScorer {
    fn descriptor(&self) -> &ModelDescriptor {
        &self.desc
    }

    fn predict(&self, image: &ImageTensor) -> Result<Prediction, AdapterError> {
        Ok(Prediction::classification(
            REGION_SCORER,
            softmax(&Self::logits(image)),
        )?)
    }

    fn target_output(&self, image: &ImageTensor, target: &TargetSpec) -> Result<f64, AdapterError> {
        let c = class_target(target, 2)?;
        Ok(Self::logits(image)[c])
    }

    fn activations_and_gradients(
        &self,
        image: &ImageTensor,
        target: &TargetSpec,
    ) -> Result<FeatureBundle, AdapterError> {
        let c = class_target(target, 2)?;
        let lum = image.luminance();
        let half = if c == 0 { Half::Left } else { Half::Right };
        let grad = region_indicator(lum.height, lum.width, half);
        Ok(FeatureBundle::new(vec![lum], vec![grad], LAYER)?)
    }
}

/// Classifier whose single feature map is the input; class 0 has logit
/// `Σ A`, class 1 has a constant zero logit (a dead pathway).
#[derive(Debug, Clone)]
pub struct IdentityConv {
    desc: ModelDescriptor,
}

impl IdentityConv {
    pub fn new() -> Self {
        Self {
            desc: ModelDescriptor {
                model_id: IDENTITY_CONV.to_string(),
                task: TaskKind::Classification,
                label_set: labels(&["sum", "null"]),
                supports_gradients: true,
                input_size: NOMINAL_SIZE,
                explanation_layer: LAYER.to_string(),
                serialized: false,
            },
        }
    }
}

impl Default for IdentityConv {
    fn default() -> Self {
        Self::new()
    }
}

impl VisionModel for IdentityConv {
    fn descriptor(&self) -> &ModelDescriptor {
        &self.desc
    }

    fn predict(&self, image: &ImageTensor) -> Result<Prediction, AdapterError> {
        let s = image.luminance().sum();
        Ok(Prediction::classification(IDENTITY_CONV, softmax(&[s, 0.0]))?)
    }

    fn target_output(&self, image: &ImageTensor, target: &TargetSpec) -> Result<f64, AdapterError> {
        Ok(match class_target(target, 2)? {
            0 => image.luminance().sum(),
            _ => 0.0,
        })
    }

    fn activations_and_gradients(
        &self,
        image: &ImageTensor,
        target: &TargetSpec,
    ) -> Result<FeatureBundle, AdapterError> {
        let c = class_target(target, 2)?;
        let lum = image.luminance();
        let fill = if c == 0 { 1.0 } else { 0.0 };
        let grad = Grid::filled(lum.height, lum.width, fill);
        Ok(FeatureBundle::new(vec![lum], vec![grad], LAYER)?)
    }
}

/// Detector emitting one square box centred on the brightest pixel.
///
/// Objectness is that pixel's luminance; class probabilities are
/// proportional to the left/right half sums (uniform when both are zero).
/// An all-black image yields no detection.
#[derive(Debug, Clone)]
pub struct BoxDetector {
    desc: ModelDescriptor,
    box_side: f64,
}

impl BoxDetector {
    pub fn new() -> Self {
        Self::with_box_side(2.0)
    }

    pub fn with_box_side(box_side: f64) -> Self {
        Self {
            desc: ModelDescriptor {
                model_id: BOX_DETECTOR.to_string(),
                task: TaskKind::Detection,
                label_set: labels(&["left", "right"]),
                supports_gradients: false,
                input_size: NOMINAL_SIZE,
                explanation_layer: String::new(),
                serialized: false,
            },
            box_side,
        }
    }

    /// Row-major index of the brightest pixel (lowest index on ties) and its value.
    pub fn brightest(lum: &Grid) -> (usize, f64) {
        let mut best = (0, f64::NEG_INFINITY);
        for (i, &v) in lum.values.iter().enumerate() {
            if v > best.1 {
                best = (i, v);
            }
        }
        best
    }
}

impl Default for BoxDetector {
    fn default() -> Self {
        Self::new()
    }
}

impl VisionModel for BoxDetector {
    fn descriptor(&self) -> &ModelDescriptor {
        &self.desc
    }

    fn predict(&self, image: &ImageTensor) -> Result<Prediction, AdapterError> {
        let lum = image.luminance();
        let (idx, value) = Self::brightest(&lum);
        if value <= 0.0 {
            return Ok(Prediction::detection(BOX_DETECTOR, Vec::new())?);
        }
        let (y, x) = (idx / lum.width, idx % lum.width);
        let half = self.box_side / 2.0;
        let (cx, cy) = (x as f64 + 0.5, y as f64 + 0.5);
        let bbox = BoundingBox::new(
            (cx - half).max(0.0),
            (cy - half).max(0.0),
            (cx + half).min(lum.width as f64),
            (cy + half).min(lum.height as f64),
        )?;
        let (l, r) = half_sums(&lum);
        let probs = if l + r > 0.0 {
            vec![l / (l + r), r / (l + r)]
        } else {
            vec![0.5, 0.5]
        };
        let det = Detection::new(bbox, probs, value)?;
        Ok(Prediction::detection(BOX_DETECTOR, vec![det])?)
    }
}

/// Segmenter labelling pixels with luminance `> 0.5` as foreground (1).
///
/// Per-pixel logits are `[0.5 − x, x − 0.5]`. The gradient target for class
/// `c` is the mean class-`c` logit over the pixels currently assigned to
/// `c`.
#[derive(Debug, Clone)]
pub struct ThresholdSegmenter {
    desc: ModelDescriptor,
}

impl ThresholdSegmenter {
    pub fn new() -> Self {
        Self {
            desc: ModelDescriptor {
                model_id: THRESHOLD_SEGMENTER.to_string(),
                task: TaskKind::Segmentation,
                label_set: labels(&["background", "foreground"]),
                supports_gradients: true,
                input_size: NOMINAL_SIZE,
                explanation_layer: LAYER.to_string(),
                serialized: false,
            },
        }
    }

    fn label(x: f64) -> u32 {
        u32::from(x > 0.5)
    }

    fn logit(x: f64, class: usize) -> f64 {
        if class == 1 {
            x - 0.5
        } else {
            0.5 - x
        }
    }
}

impl Default for ThresholdSegmenter {
    fn default() -> Self {
        Self::new()
    }
}

impl VisionModel for ThresholdSegmenter {
    fn descriptor(&self) -> &ModelDescriptor {
        &self.desc
    }

    fn predict(&self, image: &ImageTensor) -> Result<Prediction, AdapterError> {
        let lum = image.luminance();
        let labels = lum.values.iter().map(|&x| Self::label(x)).collect();
        let map = LabelMap::new(lum.height, lum.width, labels)?;
        Ok(Prediction::segmentation(THRESHOLD_SEGMENTER, map)?)
    }

    fn target_output(&self, image: &ImageTensor, target: &TargetSpec) -> Result<f64, AdapterError> {
        let c = class_target(target, 2)?;
        let lum = image.luminance();
        let region: Vec<f64> = lum
            .values
            .iter()
            .filter(|&&x| Self::label(x) as usize == c)
            .map(|&x| Self::logit(x, c))
            .collect();
        if region.is_empty() {
            return Ok(0.0);
        }
        Ok(region.iter().sum::<f64>() / region.len() as f64)
    }

    fn activations_and_gradients(
        &self,
        image: &ImageTensor,
        target: &TargetSpec,
    ) -> Result<FeatureBundle, AdapterError> {
        let c = class_target(target, 2)?;
        let lum = image.luminance();
        let count = lum.values.iter().filter(|&&x| Self::label(x) as usize == c).count();
        let mut grad = Grid::zeros(lum.height, lum.width);
        if count > 0 {
            let sign = if c == 1 { 1.0 } else { -1.0 };
            for (g, &x) in grad.values.iter_mut().zip(&lum.values) {
                if Self::label(x) as usize == c {
                    *g = sign / count as f64;
                }
            }
        }
        Ok(FeatureBundle::new(vec![lum], vec![grad], LAYER)?)
    }

    fn pixel_probabilities(&self, image: &ImageTensor) -> Result<Vec<Grid>, AdapterError> {
        let lum = image.luminance();
        let mut bg = Grid::zeros(lum.height, lum.width);
        let mut fg = Grid::zeros(lum.height, lum.width);
        for (i, &x) in lum.values.iter().enumerate() {
            let p = softmax(&[Self::logit(x, 0), Self::logit(x, 1)]);
            bg.values[i] = p[0];
            fg.values[i] = p[1];
        }
        Ok(vec![bg, fg])
    }
}

/// Registry preloaded with the four toy models.
pub fn toy_registry() -> ModelRegistry {
    let mut reg = ModelRegistry::new();
    let models: [Arc<dyn VisionModel>; 4] = [
        Arc::new(RegionScorer::new()),
        Arc::new(IdentityConv::new()),
        Arc::new(BoxDetector::new()),
        Arc::new(ThresholdSegmenter::new()),
    ];
    for m in models {
        reg.register(m).expect("toy model ids are unique");
    }
    reg
}
