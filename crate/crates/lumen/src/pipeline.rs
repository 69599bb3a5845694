//! The explanation workflow over registered models, methods, providers and
//! the run store.
//!
//! [`Workbench::run_explanation`] is all-or-nothing: overlay and saliency
//! blobs are staged in memory while the provider is called, and are written
//! together with the ledger record only after the provider succeeds.

use std::collections::BTreeMap;
use std::str::FromStr;
use std::sync::{Arc, Mutex};

use lumen_core::methods::{ExplainRequest, MethodError, MethodRegistry};
use lumen_core::overlay::render_overlay;
use lumen_core::prompt::{
    build_prompt, verdict, BlobLookup, ExplanationRecord, ExplanationRequest, PromptBundle,
    PromptError, PromptInputs, Verdict, TEMPLATE_ID,
};
use lumen_core::saliency::perturbation::PerturbationParams;
use lumen_core::saliency::SaliencyError;
use lumen_core::textmetrics::{
    aggregate, score_pair, Embedder, EmbedderFailure, HashingEmbedder, MetricError, MetricReport,
};
use lumen_core::{
    top1, DomainError, GroundTruth, ImageTensor, ModelError, ModelRegistry, Prediction,
    SaliencyMap, TargetSpec, TaskKind, Top1,
};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{remap_ground_truth, DatasetManifest};
use crate::image_io::{self, ImageIoError};
use crate::lvm::{LvmConfig, LvmError, LvmGateway, LvmResult};
use crate::store::{MetricRecord, RunStore, StoreError};

pub const DEFAULT_OVERLAY_ALPHA: f64 = 0.5;

/// Workflow step an error came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Input,
    Predict,
    Saliency,
    Overlay,
    Prompt,
    Lvm,
    Persist,
    Evaluate,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Input => "input",
            Stage::Predict => "predict",
            Stage::Saliency => "saliency",
            Stage::Overlay => "overlay",
            Stage::Prompt => "prompt",
            Stage::Lvm => "lvm",
            Stage::Persist => "persist",
            Stage::Evaluate => "evaluate",
        }
    }
}

#[derive(Debug, Error)]
pub enum Cause {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Method(#[from] MethodError),
    #[error(transparent)]
    Saliency(#[from] SaliencyError),
    #[error(transparent)]
    Domain(#[from] DomainError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Lvm(#[from] LvmError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Image(#[from] ImageIoError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error("{0}")]
    Invalid(String),
}

/// A component error tagged with the stage it happened in.
#[derive(Debug, Error)]
#[error("{} stage: {cause}", stage.as_str())]
pub struct PipelineError {
    pub stage: Stage,
    pub cause: Cause,
}

impl PipelineError {
    pub fn new(stage: Stage, cause: impl Into<Cause>) -> Self {
        Self {
            stage,
            cause: cause.into(),
        }
    }

    pub fn invalid(stage: Stage, message: impl Into<String>) -> Self {
        Self::new(stage, Cause::Invalid(message.into()))
    }

    /// Stable machine-readable error code.
    pub fn code(&self) -> &'static str {
        match &self.cause {
            Cause::Model(ModelError::UnknownModel(_)) => "model_not_found",
            Cause::Model(ModelError::GradientsUnsupported(_)) => "gradients_unsupported",
            Cause::Model(ModelError::TargetInvalid(_)) => "target_invalid",
            Cause::Model(_) => "model_failure",
            Cause::Method(MethodError::MethodNotFound(_)) => "method_not_found",
            Cause::Method(MethodError::NotApplicable { .. }) => "method_not_applicable",
            Cause::Method(MethodError::DuplicateMethod(_)) => "duplicate_method",
            Cause::Saliency(SaliencyError::TargetInvalid) => "target_invalid",
            Cause::Saliency(SaliencyError::Model(ModelError::UnknownModel(_))) => "model_not_found",
            Cause::Saliency(_) => "saliency_failure",
            Cause::Domain(_) => "invalid_input",
            Cause::Prompt(PromptError::UnresolvableRef(_)) => "blob_not_found",
            Cause::Prompt(PromptError::TaskMismatch(_)) => "task_mismatch",
            Cause::Prompt(_) => "prompt_failure",
            Cause::Lvm(LvmError::Auth(_)) => "lvm_auth",
            Cause::Lvm(LvmError::RateLimited { .. }) => "lvm_rate_limited",
            Cause::Lvm(LvmError::Timeout { .. }) => "lvm_timeout",
            Cause::Lvm(LvmError::UnknownProvider(_)) => "provider_not_found",
            Cause::Lvm(LvmError::InvalidConfig(_)) => "invalid_lvm_config",
            Cause::Lvm(LvmError::MalformedResponse(_)) => "lvm_malformed_response",
            Cause::Lvm(_) => "lvm_unavailable",
            Cause::Store(StoreError::BlobNotFound(_) | StoreError::InvalidKey(_)) => "blob_not_found",
            Cause::Store(StoreError::RecordNotFound(_)) => "record_not_found",
            Cause::Store(_) => "store_failure",
            Cause::Image(_) => "invalid_image",
            Cause::Metric(MetricError::Embedder(_)) => "embedder_failure",
            Cause::Metric(_) => "invalid_input",
            Cause::Invalid(_) => "invalid_input",
        }
    }
}

fn at<E: Into<Cause>>(stage: Stage) -> impl FnOnce(E) -> PipelineError {
    move |e| PipelineError::new(stage, e)
}

/// Which output of a prediction to explain.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TargetChoice {
    /// Argmax class, majority segment label, or the most confident detection.
    #[default]
    Top1,
    Class {
        class_id: usize,
    },
    ClassName {
        name: String,
    },
    Detection {
        index: usize,
    },
}

impl FromStr for TargetChoice {
    type Err = String;

    /// `top1`, a class id, `class:<name>`, or `det:<index>`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "top1" {
            return Ok(Self::Top1);
        }
        if let Some(name) = s.strip_prefix("class:") {
            return Ok(Self::ClassName { name: name.into() });
        }
        if let Some(i) = s.strip_prefix("det:") {
            return i
                .parse()
                .map(|index| Self::Detection { index })
                .map_err(|_| format!("bad detection index in {s:?}"));
        }
        s.parse()
            .map(|class_id| Self::Class { class_id })
            .map_err(|_| format!("target {s:?} is not top1, a class id, class:<name> or det:<index>"))
    }
}

impl TargetChoice {
    pub fn resolve(&self, pred: &Prediction, label_set: &[String]) -> Result<TargetSpec, String> {
        let class = |class_id: usize| -> Result<TargetSpec, String> {
            if pred.task() == TaskKind::Detection {
                return Err("detection models take a det:<index> target".into());
            }
            if class_id >= label_set.len() {
                return Err(format!("class id {class_id} outside label set of {}", label_set.len()));
            }
            Ok(TargetSpec::class(class_id))
        };
        match self {
            TargetChoice::Top1 => match top1(pred).map_err(|e| e.to_string())? {
                Top1::Class(c) => class(c),
                Top1::PerDetection(_) => {
                    let dets = pred.detections().unwrap_or_default();
                    let best = dets
                        .iter()
                        .enumerate()
                        .fold(None::<(usize, f64)>, |b, (i, d)| match b {
                            Some((_, o)) if o >= d.objectness() => b,
                            _ => Some((i, d.objectness())),
                        })
                        .map(|(i, _)| i)
                        .ok_or("prediction has no detections")?;
                    TargetSpec::detection_of(pred, best).ok_or_else(|| "no detection".into())
                }
            },
            TargetChoice::Class { class_id } => class(*class_id),
            TargetChoice::ClassName { name } => {
                let id = label_set
                    .iter()
                    .position(|n| n == name)
                    .ok_or_else(|| format!("class {name:?} not in label set"))?;
                class(id)
            }
            TargetChoice::Detection { index } => TargetSpec::detection_of(pred, *index)
                .ok_or_else(|| format!("prediction has no detection {index}")),
        }
    }
}

/// Blobs produced during a run, held back until the run succeeds.
#[derive(Default)]
struct Pending(BTreeMap<String, Vec<u8>>);

impl Pending {
    fn stage(&mut self, bytes: Vec<u8>) -> String {
        let key = crate::store::blob_key(&bytes);
        self.0.insert(key.clone(), bytes);
        key
    }
}

struct Staged<'a> {
    pending: &'a Pending,
    store: &'a RunStore,
}

impl BlobLookup for Staged<'_> {
    fn contains(&self, blob: &str) -> bool {
        self.pending.0.contains_key(blob) || self.store.has_blob(blob)
    }
}

impl Staged<'_> {
    fn bytes(&self, blob: &str) -> Option<Vec<u8>> {
        self.pending
            .0
            .get(blob)
            .cloned()
            .or_else(|| self.store.get_blob(blob).ok())
    }
}

/// Input to [`Workbench::run_explanation`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplainInput {
    pub image_ref: String,
    pub task: TaskKind,
    pub model_id: String,
    pub method_id: String,
    #[serde(default)]
    pub target: TargetChoice,
    pub ground_truth: GroundTruth,
    pub lvm: LvmConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExplainOutcome {
    pub record: ExplanationRecord,
    pub prompt: PromptBundle,
    pub lvm: LvmResult,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SaliencyOutcome {
    pub saliency_ref: String,
    pub overlay_ref: String,
    pub target: TargetSpec,
    pub map: SaliencyMap,
}

/// One hypothesis/reference pair to score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalPair {
    pub sample_id: String,
    #[serde(default)]
    pub task: Option<TaskKind>,
    pub hypothesis: String,
    pub reference: String,
}

/// Deterministic summary of a bench run: no record ids or timestamps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub dataset_id: String,
    pub model_id: String,
    pub method_id: String,
    pub provider: String,
    pub template_id: String,
    pub verdicts: Vec<(String, Verdict)>,
    pub metrics: MetricReport,
}

pub struct Workbench {
    pub models: ModelRegistry,
    pub methods: MethodRegistry,
    pub gateway: LvmGateway,
    pub store: RunStore,
    pub embedder: Arc<dyn Embedder>,
    pub params: PerturbationParams,
    pub overlay_alpha: f64,
    clock: Mutex<Box<dyn FnMut() -> String + Send>>,
}

impl std::fmt::Debug for Workbench {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Workbench")
            .field("models", &self.models)
            .field("methods", &self.methods)
            .field("store", &self.store)
            .finish()
    }
}

pub fn now_rfc3339() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

impl Workbench {
    /// Toy models, built-in methods and providers, and the hashing embedder.
    pub fn new(store: RunStore) -> Self {
        Self::with_parts(
            store,
            lumen_core::toy::toy_registry(),
            LvmGateway::with_builtins(),
        )
    }

    pub fn with_parts(store: RunStore, models: ModelRegistry, gateway: LvmGateway) -> Self {
        Self {
            models,
            methods: MethodRegistry::with_builtins(),
            gateway,
            store,
            embedder: Arc::new(HashingEmbedder),
            params: PerturbationParams::default(),
            overlay_alpha: DEFAULT_OVERLAY_ALPHA,
            clock: Mutex::new(Box::new(now_rfc3339)),
        }
    }

    /// Replaces the timestamp source.
    pub fn set_clock(&self, clock: impl FnMut() -> String + Send + 'static) {
        *self.clock.lock().unwrap_or_else(|e| e.into_inner()) = Box::new(clock);
    }

    fn now(&self) -> String {
        (self.clock.lock().unwrap_or_else(|e| e.into_inner()))()
    }

    /// Validates PNG bytes and stores them unchanged.
    pub fn upload_image(&self, bytes: &[u8]) -> Result<(String, ImageTensor), PipelineError> {
        let image = image_io::decode_png(bytes).map_err(at(Stage::Input))?;
        let key = self.store.put_blob(bytes).map_err(at(Stage::Input))?;
        Ok((key, image))
    }

    pub fn load_image(&self, image_ref: &str) -> Result<ImageTensor, PipelineError> {
        let bytes = self.store.get_blob(image_ref).map_err(at(Stage::Input))?;
        image_io::decode_png(&bytes).map_err(at(Stage::Input))
    }

    fn label_set(&self, model_id: &str) -> Result<Vec<String>, PipelineError> {
        Ok(self
            .models
            .descriptor(model_id)
            .map_err(at(Stage::Predict))?
            .label_set
            .clone())
    }

    pub fn predict(&self, image_ref: &str, model_id: &str) -> Result<Prediction, PipelineError> {
        let image = self.load_image(image_ref)?;
        self.models.predict(model_id, &image).map_err(at(Stage::Predict))
    }

    fn check_task(&self, model_id: &str, task: TaskKind) -> Result<(), PipelineError> {
        let desc = self.models.descriptor(model_id).map_err(at(Stage::Predict))?;
        if desc.task != task {
            return Err(PipelineError::invalid(
                Stage::Predict,
                format!("model {model_id} is a {} model, not {task}", desc.task),
            ));
        }
        Ok(())
    }

    fn explain_map(
        &self,
        image: &ImageTensor,
        model_id: &str,
        method_id: &str,
        target: &TargetSpec,
    ) -> Result<SaliencyMap, PipelineError> {
        let task = self.models.descriptor(model_id).map_err(at(Stage::Predict))?.task;
        let method = self.methods.resolve(method_id, task).map_err(at(Stage::Saliency))?;
        method
            .explain(&ExplainRequest {
                models: &self.models,
                model_id,
                image,
                target,
                params: &self.params,
                masks: None,
            })
            .map_err(at(Stage::Saliency))
    }

    fn render(&self, image: &ImageTensor, map: &SaliencyMap, pending: &mut Pending) -> Result<(String, String), PipelineError> {
        let overlay = render_overlay(image, map, self.overlay_alpha).map_err(at(Stage::Overlay))?;
        let png = image_io::encode_png(&overlay).map_err(at(Stage::Overlay))?;
        let overlay_ref = pending.stage(png);
        let json = serde_json::to_vec(map).expect("saliency maps serialize");
        let saliency_ref = pending.stage(json);
        Ok((saliency_ref, overlay_ref))
    }

    fn commit(&self, pending: Pending) -> Result<(), PipelineError> {
        for bytes in pending.0.values() {
            self.store.put_blob(bytes).map_err(at(Stage::Persist))?;
        }
        Ok(())
    }

    /// Saliency map and overlay for one target; both are stored as blobs.
    pub fn saliency(
        &self,
        image_ref: &str,
        model_id: &str,
        method_id: &str,
        target: &TargetChoice,
    ) -> Result<SaliencyOutcome, PipelineError> {
        let image = self.load_image(image_ref)?;
        let labels = self.label_set(model_id)?;
        let task = self.models.descriptor(model_id).map_err(at(Stage::Predict))?.task;
        self.methods.resolve(method_id, task).map_err(at(Stage::Saliency))?;
        let pred = self.models.predict(model_id, &image).map_err(at(Stage::Predict))?;
        let spec = target
            .resolve(&pred, &labels)
            .map_err(|m| PipelineError::invalid(Stage::Saliency, m))?;
        let map = self.explain_map(&image, model_id, method_id, &spec)?;
        let mut pending = Pending::default();
        let (saliency_ref, overlay_ref) = self.render(&image, &map, &mut pending)?;
        self.commit(pending)?;
        Ok(SaliencyOutcome {
            saliency_ref,
            overlay_ref,
            target: spec,
            map,
        })
    }

    /// predict → saliency → overlay → prompt → provider → persisted record.
    pub fn run_explanation(&self, input: &ExplainInput) -> Result<ExplainOutcome, PipelineError> {
        self.check_task(&input.model_id, input.task)?;
        if input.ground_truth.task() != input.task {
            return Err(PipelineError::invalid(
                Stage::Input,
                format!("ground truth is {}, request is {}", input.ground_truth.task(), input.task),
            ));
        }
        self.methods
            .resolve(&input.method_id, input.task)
            .map_err(at(Stage::Saliency))?;
        let image = self.load_image(&input.image_ref)?;
        let labels = self.label_set(&input.model_id)?;
        let pred = self
            .models
            .predict(&input.model_id, &image)
            .map_err(at(Stage::Predict))?;
        let target = input
            .target
            .resolve(&pred, &labels)
            .map_err(|m| PipelineError::invalid(Stage::Saliency, m))?;
        let map = self.explain_map(&image, &input.model_id, &input.method_id, &target)?;

        let mut pending = Pending::default();
        let (saliency_ref, overlay_ref) = self.render(&image, &map, &mut pending)?;
        let staged = Staged {
            pending: &pending,
            store: &self.store,
        };
        let prompt = build_prompt(
            &PromptInputs {
                task: input.task,
                image_ref: &input.image_ref,
                overlay_ref: &overlay_ref,
                prediction: &pred,
                ground_truth: &input.ground_truth,
                target: &target,
                label_set: &labels,
            },
            &staged,
        )
        .map_err(at(Stage::Prompt))?;
        let v = verdict(&pred, &target, &input.ground_truth).map_err(at(Stage::Prompt))?;
        let lvm = self
            .gateway
            .complete(&prompt, &|r| staged.bytes(r), &input.lvm)
            .map_err(at(Stage::Lvm))?;

        self.commit(pending)?;
        let created_at = self.now();
        let request = ExplanationRequest {
            image_ref: input.image_ref.clone(),
            task: input.task,
            model_id: input.model_id.clone(),
            method_id: input.method_id.clone(),
            target,
            ground_truth: input.ground_truth.clone(),
        };
        let record = self
            .store
            .append_explanation(|record_id| ExplanationRecord {
                record_id,
                request,
                saliency_ref,
                overlay_ref,
                prediction: pred,
                template_id: TEMPLATE_ID.to_string(),
                explanation_text: lvm.text.clone(),
                verdict: v,
                created_at,
                lvm_provider: lvm.provider.clone(),
            })
            .map_err(at(Stage::Persist))?;
        Ok(ExplainOutcome { record, prompt, lvm })
    }

    /// Scores pairs and aggregates them into a report for `task`.
    pub fn score(&self, pairs: &[EvalPair], task: TaskKind) -> Result<MetricReport, PipelineError> {
        let rows = pairs
            .iter()
            .map(|p| {
                if p.task.is_some_and(|t| t != task) {
                    return Err(PipelineError::invalid(
                        Stage::Evaluate,
                        format!("pair {} is not a {task} sample", p.sample_id),
                    ));
                }
                score_pair(&p.sample_id, &p.hypothesis, &p.reference, self.embedder.as_ref())
                    .map_err(|e: EmbedderFailure| PipelineError::new(Stage::Evaluate, MetricError::from(e)))
            })
            .collect::<Result<Vec<_>, _>>()?;
        aggregate(rows, task).map_err(at(Stage::Evaluate))
    }

    /// [`score`](Self::score) plus a ledger entry.
    pub fn evaluate(&self, pairs: &[EvalPair], task: TaskKind) -> Result<MetricRecord, PipelineError> {
        let report = self.score(pairs, task)?;
        self.store
            .append_report(report, self.now())
            .map_err(at(Stage::Persist))
    }

    /// Explains every manifest item that has a reference text and scores the
    /// explanations against the references.
    pub fn bench(
        &self,
        manifest: &DatasetManifest,
        model_id: &str,
        method_id: &str,
        target: &TargetChoice,
        lvm: &LvmConfig,
    ) -> Result<BenchReport, PipelineError> {
        self.check_task(model_id, manifest.task)?;
        let labels = self.label_set(model_id)?;
        let mut pairs = Vec::new();
        let mut verdicts = Vec::new();
        for item in &manifest.items {
            let Some(reference) = &item.reference else {
                continue;
            };
            let path = manifest.image_path(item);
            let bytes = std::fs::read(&path).map_err(|e| {
                PipelineError::invalid(Stage::Input, format!("{}: {e}", path.display()))
            })?;
            let (image_ref, _) = self.upload_image(&bytes)?;
            let ground_truth = remap_ground_truth(&item.ground_truth, &manifest.label_set, &labels)
                .map_err(|m| PipelineError::invalid(Stage::Input, format!("{}: {m}", item.sample_id)))?;
            let out = self.run_explanation(&ExplainInput {
                image_ref,
                task: manifest.task,
                model_id: model_id.to_string(),
                method_id: method_id.to_string(),
                target: target.clone(),
                ground_truth,
                lvm: lvm.clone(),
            })?;
            verdicts.push((item.sample_id.clone(), out.record.verdict));
            pairs.push(EvalPair {
                sample_id: item.sample_id.clone(),
                task: Some(manifest.task),
                hypothesis: out.record.explanation_text,
                reference: reference.clone(),
            });
        }
        if pairs.is_empty() {
            return Err(PipelineError::invalid(
                Stage::Evaluate,
                format!("dataset {} has no reference texts", manifest.dataset_id),
            ));
        }
        let metrics = self.score(&pairs, manifest.task)?;
        Ok(BenchReport {
            dataset_id: manifest.dataset_id.clone(),
            model_id: model_id.to_string(),
            method_id: method_id.to_string(),
            provider: lvm.provider.clone(),
            template_id: TEMPLATE_ID.to_string(),
            verdicts,
            metrics,
        })
    }
}
