//! Core of the lumen explanation workbench.
//!
//! Everything in this crate is pure computation over in-memory values and
//! builds without `std` (only `alloc` is required):
//!
//! - [`domain`]: shared value types (images, predictions, boxes, saliency maps).
//! - [`model`]: the vision-model adapter contract and registry.
//! - [`toy`]: analytic toy models whose outputs and gradients are known in closed form.
//! - [`saliency`]: gradient (CAM family) and perturbation (RISE, D-RISE) attribution.
//! - [`methods`]: the attribution method registry, partitioned by mechanism and task.
//! - [`overlay`]: fixed colormap and alpha blending of saliency over the input.
//! - [`prompt`]: three-stage prompt assembly and explanation records.
//! - [`textmetrics`]: BLEU, METEOR, ROUGE-L and an embedding-matching score.
//!
//! IO, persistence, the LVM client and the HTTP service live in the `lumen` crate.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod domain;
pub mod methods;
pub mod model;
pub mod overlay;
pub mod prompt;
pub mod saliency;
pub mod textmetrics;
pub mod toy;

mod grid;

pub use domain::{
    iou, top1, validate_image, BoundingBox, Detection, DomainError, GroundTruth, GroundTruthBox,
    GroundTruthPayload, ImageTensor, LabelMap, Mechanism, PixelDims, Prediction,
    PredictionPayload, RawPixels, SaliencyMap, TargetSpec, TaskKind, Top1,
};
pub use grid::Grid;
pub use model::{
    AdapterError, FeatureBundle, ModelDescriptor, ModelError, ModelRegistry, VisionModel,
};
