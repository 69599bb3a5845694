//! Vision-model adapter contract and the model registry.

use alloc::string::{String, ToString};
use alloc::sync::Arc;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{DomainError, ImageTensor, Prediction, TargetSpec, TaskKind};
use crate::grid::Grid;

/// Static facts about a model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelDescriptor {
    pub model_id: String,
    pub task: TaskKind,
    pub label_set: Vec<String>,
    pub supports_gradients: bool,
    /// `(height, width)` the adapter expects; it resizes internally otherwise.
    pub input_size: (usize, usize),
    /// Layer whose activations feed CAM methods (empty when gradients are unsupported).
    #[serde(default)]
    pub explanation_layer: String,
    /// When true the adapter must not be invoked concurrently; the caller
    /// serializes access.
    #[serde(default)]
    pub serialized: bool,
}

/// Activations `A^k` of the explanation layer and `∂y/∂A^k` for a scalar target `y`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureBundle {
    pub feature_maps: Vec<Grid>,
    pub gradients: Vec<Grid>,
    pub layer_id: String,
}

impl FeatureBundle {
    /// Validates that both stacks have the same `K × h × w` shape and finite values.
    pub fn new(
        feature_maps: Vec<Grid>,
        gradients: Vec<Grid>,
        layer_id: impl Into<String>,
    ) -> Result<Self, DomainError> {
        let bundle = Self {
            feature_maps,
            gradients,
            layer_id: layer_id.into(),
        };
        bundle.check()?;
        Ok(bundle)
    }

    pub fn check(&self) -> Result<(), DomainError> {
        let mismatch = || DomainError::DimensionMismatch {
            expected: self.feature_maps.len(),
            actual: self.gradients.len(),
        };
        if self.feature_maps.is_empty() || self.feature_maps.len() != self.gradients.len() {
            return Err(mismatch());
        }
        let (h, w) = (self.feature_maps[0].height, self.feature_maps[0].width);
        if h == 0 || w == 0 {
            return Err(DomainError::EmptyImage);
        }
        for (a, g) in self.feature_maps.iter().zip(&self.gradients) {
            if a.height != h || a.width != w || g.height != h || g.width != w {
                return Err(mismatch());
            }
            if a.len() != h * w || g.len() != h * w {
                return Err(mismatch());
            }
            if let Some(i) = a.values.iter().chain(&g.values).position(|v| !v.is_finite()) {
                return Err(DomainError::ValueOutOfRange {
                    index: i,
                    value: f64::NAN,
                });
            }
        }
        Ok(())
    }

    pub fn channels(&self) -> usize {
        self.feature_maps.len()
    }

    pub fn spatial(&self) -> (usize, usize) {
        (self.feature_maps[0].height, self.feature_maps[0].width)
    }
}

/// Errors raised inside an adapter.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum AdapterError {
    #[error("adapter does not expose gradients")]
    GradientsUnsupported,
    #[error("operation not supported by this adapter: {0}")]
    Unsupported(&'static str),
    #[error("target not valid for this model")]
    TargetInvalid,
    #[error("{0}")]
    Failed(String),
}

impl From<DomainError> for AdapterError {
    fn from(e: DomainError) -> Self {
        AdapterError::Failed(e.to_string())
    }
}

/// A vision model behind the uniform adapter contract.
///
/// Only [`predict`](VisionModel::predict) is mandatory. Gradient-capable
/// adapters override [`activations_and_gradients`](VisionModel::activations_and_gradients)
/// and [`target_output`](VisionModel::target_output); segmentation adapters
/// expose per-pixel class probabilities for perturbation methods.
pub trait VisionModel: Send + Sync {
    fn descriptor(&self) -> &ModelDescriptor;

    fn predict(&self, image: &ImageTensor) -> Result<Prediction, AdapterError>;

    /// Scores a batch of images. The default loops over [`predict`](VisionModel::predict).
    fn predict_batch(&self, images: &[ImageTensor]) -> Result<Vec<Prediction>, AdapterError> {
        images.iter().map(|img| self.predict(img)).collect()
    }

    /// Scalar output `y` whose gradient [`activations_and_gradients`](VisionModel::activations_and_gradients) reports.
    fn target_output(&self, _image: &ImageTensor, _target: &TargetSpec) -> Result<f64, AdapterError> {
        Err(AdapterError::GradientsUnsupported)
    }

    fn activations_and_gradients(
        &self,
        _image: &ImageTensor,
        _target: &TargetSpec,
    ) -> Result<FeatureBundle, AdapterError> {
        Err(AdapterError::GradientsUnsupported)
    }

    /// Per-pixel class probabilities, one `H × W` grid per label.
    fn pixel_probabilities(&self, _image: &ImageTensor) -> Result<Vec<Grid>, AdapterError> {
        Err(AdapterError::Unsupported("pixel probabilities"))
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("model id already registered: {0}")]
    DuplicateModelId(String),
    #[error("unknown model: {0}")]
    UnknownModel(String),
    #[error("model {0} does not support gradients")]
    GradientsUnsupported(String),
    #[error("invalid target for model {0}")]
    TargetInvalid(String),
    #[error("adapter {model_id} failed: {source}")]
    AdapterFailure {
        model_id: String,
        source: AdapterError,
    },
}

/// Ordered collection of registered models.
///
/// The registry itself does no locking; share it behind a read-write lock
/// when it is mutated at runtime.
#[derive(Default, Clone)]
pub struct ModelRegistry {
    entries: Vec<Arc<dyn VisionModel>>,
}

impl core::fmt::Debug for ModelRegistry {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.debug_list()
            .entries(self.entries.iter().map(|m| &m.descriptor().model_id))
            .finish()
    }
}

impl ModelRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, adapter: Arc<dyn VisionModel>) -> Result<String, ModelError> {
        let id = adapter.descriptor().model_id.clone();
        if self.get(&id).is_ok() {
            return Err(ModelError::DuplicateModelId(id));
        }
        self.entries.push(adapter);
        Ok(id)
    }

    /// Descriptors whose task matches, in registration order.
    pub fn list_models(&self, task: TaskKind) -> Vec<&ModelDescriptor> {
        self.entries
            .iter()
            .map(|m| m.descriptor())
            .filter(|d| d.task == task)
            .collect()
    }

    pub fn all(&self) -> impl Iterator<Item = &ModelDescriptor> {
        self.entries.iter().map(|m| m.descriptor())
    }

    pub fn get(&self, model_id: &str) -> Result<&Arc<dyn VisionModel>, ModelError> {
        self.entries
            .iter()
            .find(|m| m.descriptor().model_id == model_id)
            .ok_or_else(|| ModelError::UnknownModel(model_id.to_string()))
    }

    pub fn descriptor(&self, model_id: &str) -> Result<&ModelDescriptor, ModelError> {
        self.get(model_id).map(|m| m.descriptor())
    }

    pub fn predict(&self, model_id: &str, image: &ImageTensor) -> Result<Prediction, ModelError> {
        let model = self.get(model_id)?;
        checked_predict(model.as_ref(), image)
    }

    pub fn activations_and_gradients(
        &self,
        model_id: &str,
        image: &ImageTensor,
        target: &TargetSpec,
    ) -> Result<FeatureBundle, ModelError> {
        let model = self.get(model_id)?;
        let desc = model.descriptor();
        if !desc.supports_gradients {
            return Err(ModelError::GradientsUnsupported(model_id.to_string()));
        }
        check_target(desc, target)?;
        let bundle = model
            .activations_and_gradients(image, target)
            .map_err(|e| wrap(model_id, e))?;
        bundle.check().map_err(|e| wrap(model_id, e.into()))?;
        Ok(bundle)
    }
}

fn wrap(model_id: &str, e: AdapterError) -> ModelError {
    match e {
        AdapterError::GradientsUnsupported => ModelError::GradientsUnsupported(model_id.to_string()),
        AdapterError::TargetInvalid => ModelError::TargetInvalid(model_id.to_string()),
        other => ModelError::AdapterFailure {
            model_id: model_id.to_string(),
            source: other,
        },
    }
}

/// Runs `predict` and enforces the prediction invariants against the input.
pub fn checked_predict(model: &dyn VisionModel, image: &ImageTensor) -> Result<Prediction, ModelError> {
    let id = &model.descriptor().model_id;
    let pred = model.predict(image).map_err(|e| wrap(id, e))?;
    validate_prediction(model.descriptor(), image, &pred).map_err(|e| wrap(id, e.into()))?;
    Ok(pred)
}

pub(crate) fn validate_prediction(
    desc: &ModelDescriptor,
    image: &ImageTensor,
    pred: &Prediction,
) -> Result<(), DomainError> {
    if pred.task() != desc.task {
        return Err(DomainError::TaskMismatch(desc.task));
    }
    pred.check_against(image)
}

/// Checks that `target` is meaningful for the model's task and label set.
pub fn check_target(desc: &ModelDescriptor, target: &TargetSpec) -> Result<(), ModelError> {
    let invalid = || ModelError::TargetInvalid(desc.model_id.clone());
    match (desc.task, target) {
        (TaskKind::Classification | TaskKind::Segmentation, TargetSpec::Class { class_id }) => {
            if *class_id < desc.label_set.len() {
                Ok(())
            } else {
                Err(invalid())
            }
        }
        (TaskKind::Detection, TargetSpec::Detection { detection, .. }) => {
            if detection.class_probs().len() == desc.label_set.len() {
                Ok(())
            } else {
                Err(invalid())
            }
        }
        _ => Err(invalid()),
    }
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| libm::exp(z - max)).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}
