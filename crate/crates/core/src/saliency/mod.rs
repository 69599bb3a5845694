//! Saliency attribution.
//!
//! [`gradient`] holds the CAM family over a [`FeatureBundle`](crate::FeatureBundle);
//! [`perturbation`] holds RISE and D-RISE over black-box model outputs.

pub mod gradient;
pub mod perturbation;

use alloc::string::String;
use thiserror::Error;

use crate::domain::DomainError;
use crate::model::ModelError;

pub use gradient::{grad_cam, grad_cam_pp, hires_cam, normalize_map, upsample_map};
pub use perturbation::{
    d_rise, detection_similarity, enumerate_masks, generate_masks, rise, MaskSet,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SaliencyError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("non-finite value in input map")]
    NonFiniteInput,
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("mask enumeration too large: {cells} cells (max 16)")]
    TooLarge { cells: usize },
    #[error("target not valid for this model or task")]
    TargetInvalid,
    #[error("probability vectors differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Domain(#[from] DomainError),
}
