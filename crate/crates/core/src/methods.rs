//! Attribution method registry.
//!
//! Methods are partitioned by mechanism (gradient or perturbation) and by
//! the tasks they apply to. Classification and segmentation share the CAM
//! family and RISE; detection uses D-RISE. New methods plug in through
//! [`SaliencyMethod`].

use alloc::boxed::Box;
use alloc::string::{String, ToString};
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{ImageTensor, Mechanism, SaliencyMap, TargetSpec, TaskKind};
use crate::model::ModelRegistry;
use crate::saliency::gradient::{self, GRAD_CAM, GRAD_CAM_PP, HIRES_CAM};
use crate::saliency::perturbation::{self, MaskSet, PerturbationParams, D_RISE, RISE};
use crate::saliency::SaliencyError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodDescriptor {
    pub method_id: String,
    pub mechanism: Mechanism,
    pub tasks: Vec<TaskKind>,
}

impl MethodDescriptor {
    pub fn applies_to(&self, task: TaskKind) -> bool {
        self.tasks.contains(&task)
    }
}

/// Everything a method needs to explain one prediction.
pub struct ExplainRequest<'a> {
    pub models: &'a ModelRegistry,
    pub model_id: &'a str,
    pub image: &'a ImageTensor,
    pub target: &'a TargetSpec,
    pub params: &'a PerturbationParams,
    /// Precomputed masks; perturbation methods sample their own when absent.
    pub masks: Option<&'a MaskSet>,
}

pub trait SaliencyMethod: Send + Sync {
    fn descriptor(&self) -> &MethodDescriptor;

    fn explain(&self, req: &ExplainRequest<'_>) -> Result<SaliencyMap, SaliencyError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum CamKind {
    GradCam,
    GradCamPp,
    HiResCam,
}

struct CamMethod {
    kind: CamKind,
    desc: MethodDescriptor,
}

impl SaliencyMethod for CamMethod {
    fn descriptor(&self) -> &MethodDescriptor {
        &self.desc
    }

    fn explain(&self, req: &ExplainRequest<'_>) -> Result<SaliencyMap, SaliencyError> {
        let bundle = req
            .models
            .activations_and_gradients(req.model_id, req.image, req.target)?;
        let out = (req.image.height(), req.image.width());
        match self.kind {
            CamKind::GradCam => gradient::grad_cam(&bundle, out, req.target),
            CamKind::GradCamPp => gradient::grad_cam_pp(&bundle, out, req.target),
            CamKind::HiResCam => gradient::hires_cam(&bundle, out, req.target),
        }
    }
}

struct RiseMethod {
    desc: MethodDescriptor,
    detection: bool,
}

impl SaliencyMethod for RiseMethod {
    fn descriptor(&self) -> &MethodDescriptor {
        &self.desc
    }

    fn explain(&self, req: &ExplainRequest<'_>) -> Result<SaliencyMap, SaliencyError> {
        let owned;
        let masks = match req.masks {
            Some(m) => m,
            None => {
                owned = req
                    .params
                    .masks_for((req.image.height(), req.image.width()))?;
                &owned
            }
        };
        let run = if self.detection {
            perturbation::d_rise
        } else {
            perturbation::rise
        };
        run(
            req.models,
            req.model_id,
            req.image,
            req.target,
            masks,
            req.params.batch_size,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MethodError {
    #[error("method not found: {0}")]
    MethodNotFound(String),
    #[error("method id already registered: {0}")]
    DuplicateMethod(String),
    #[error("method {method_id} does not apply to {task} models")]
    NotApplicable { method_id: String, task: TaskKind },
}

/// Ordered set of attribution methods.
#[derive(Clone)]
pub struct MethodRegistry {
    methods: Vec<Arc<dyn SaliencyMethod>>,
}

impl core::fmt::Debug for MethodRegistry {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.debug_list()
            .entries(self.methods.iter().map(|m| &m.descriptor().method_id))
            .finish()
    }
}

impl Default for MethodRegistry {
    fn default() -> Self {
        Self::with_builtins()
    }
}

impl MethodRegistry {
    pub fn empty() -> Self {
        Self {
            methods: Vec::new(),
        }
    }

    /// GradCAM, GradCAM++, HiResCAM and RISE for classification and
    /// segmentation; D-RISE for detection.
    pub fn with_builtins() -> Self {
        let dense = vec![TaskKind::Classification, TaskKind::Segmentation];
        let cam = |id: &str, kind| -> Box<dyn SaliencyMethod> {
            Box::new(CamMethod {
                kind,
                desc: MethodDescriptor {
                    method_id: id.to_string(),
                    mechanism: Mechanism::Gradient,
                    tasks: dense.clone(),
                },
            })
        };
        let builtins: [Box<dyn SaliencyMethod>; 5] = [
            cam(GRAD_CAM, CamKind::GradCam),
            cam(GRAD_CAM_PP, CamKind::GradCamPp),
            cam(HIRES_CAM, CamKind::HiResCam),
            Box::new(RiseMethod {
                desc: MethodDescriptor {
                    method_id: RISE.to_string(),
                    mechanism: Mechanism::Perturbation,
                    tasks: dense.clone(),
                },
                detection: false,
            }),
            Box::new(RiseMethod {
                desc: MethodDescriptor {
                    method_id: D_RISE.to_string(),
                    mechanism: Mechanism::Perturbation,
                    tasks: vec![TaskKind::Detection],
                },
                detection: true,
            }),
        ];
        Self {
            methods: builtins.into_iter().map(Arc::from).collect(),
        }
    }

    pub fn register(&mut self, method: Arc<dyn SaliencyMethod>) -> Result<(), MethodError> {
        let id = &method.descriptor().method_id;
        if self.get(id).is_ok() {
            return Err(MethodError::DuplicateMethod(id.clone()));
        }
        self.methods.push(method);
        Ok(())
    }

    pub fn get(&self, method_id: &str) -> Result<&Arc<dyn SaliencyMethod>, MethodError> {
        self.methods
            .iter()
            .find(|m| m.descriptor().method_id == method_id)
            .ok_or_else(|| MethodError::MethodNotFound(method_id.to_string()))
    }

    /// Methods applicable to `task`, in registration order.
    pub fn list(&self, task: TaskKind) -> Vec<&MethodDescriptor> {
        self.methods
            .iter()
            .map(|m| m.descriptor())
            .filter(|d| d.applies_to(task))
            .collect()
    }

    /// Looks up a method and checks it applies to `task`.
    pub fn resolve(
        &self,
        method_id: &str,
        task: TaskKind,
    ) -> Result<&Arc<dyn SaliencyMethod>, MethodError> {
        let m = self.get(method_id)?;
        if !m.descriptor().applies_to(task) {
            return Err(MethodError::NotApplicable {
                method_id: method_id.to_string(),
                task,
            });
        }
        Ok(m)
    }
}
