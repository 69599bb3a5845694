//! HTTP API under `/api/v1`.
//!
//! Every error body is `{"code", "message", "stage"}`; request-level
//! failures (bad JSON, unknown route) use stage `request`. CPU-bound work
//! and provider calls run on the blocking pool; explanation runs are bounded
//! by the configured worker count.

use std::collections::HashMap;
use std::future::Future;
use std::net::SocketAddr;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::rejection::JsonRejection;
use axum::extract::{DefaultBodyLimit, FromRequest, Multipart, Path, Query, Request, State};
use axum::http::{header, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::Engine;
use lumen_core::methods::MethodDescriptor;
use lumen_core::{top1, GroundTruth, ModelDescriptor, TaskKind};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::lvm::LvmConfig;
use crate::pipeline::{EvalPair, ExplainInput, PipelineError, Stage, TargetChoice, Workbench};
use crate::store::{LedgerEntry, StoreError};

pub const MAX_UPLOAD_BYTES: usize = 32 * 1024 * 1024;
pub const DEFAULT_RUN_LIMIT: usize = 50;

#[derive(Debug, Error)]
pub enum ServeError {
    #[error("port in use: {0}")]
    PortInUse(String),
    #[error("cannot bind {addr}: {source}")]
    Bind {
        addr: String,
        source: std::io::Error,
    },
    #[error("server failed: {0}")]
    Io(#[from] std::io::Error),
}

pub struct AppState {
    pub workbench: Workbench,
    pub lvm: LvmConfig,
    explain_slots: tokio::sync::Semaphore,
}

impl AppState {
    pub fn new(workbench: Workbench, lvm: LvmConfig, workers: usize) -> Self {
        Self {
            workbench,
            lvm,
            explain_slots: tokio::sync::Semaphore::new(workers.max(1)),
        }
    }
}

type Shared = Arc<AppState>;

/// Error body sent to clients.
#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    code: String,
    message: String,
    stage: String,
}

impl ApiError {
    fn request(status: StatusCode, code: &str, message: impl Into<String>) -> Self {
        Self {
            status,
            code: code.into(),
            message: message.into(),
            stage: "request".into(),
        }
    }
}

fn status_for(code: &str) -> StatusCode {
    match code {
        c if c.ends_with("_not_found") => StatusCode::NOT_FOUND,
        "lvm_timeout" => StatusCode::GATEWAY_TIMEOUT,
        "lvm_rate_limited" | "lvm_auth" | "lvm_unavailable" | "lvm_malformed_response" => {
            StatusCode::BAD_GATEWAY
        }
        "store_failure" | "model_failure" | "saliency_failure" | "prompt_failure" => {
            StatusCode::INTERNAL_SERVER_ERROR
        }
        _ => StatusCode::UNPROCESSABLE_ENTITY,
    }
}

impl From<PipelineError> for ApiError {
    fn from(e: PipelineError) -> Self {
        let code = e.code();
        Self {
            status: status_for(code),
            code: code.into(),
            message: e.cause.to_string(),
            stage: e.stage.as_str().into(),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = json!({"code": self.code, "message": self.message, "stage": self.stage});
        (self.status, Json(body)).into_response()
    }
}

/// JSON body extractor whose rejections use the API error shape.
pub struct ApiJson<T>(pub T);

impl<S: Send + Sync, T: DeserializeOwned> FromRequest<S> for ApiJson<T> {
    type Rejection = ApiError;

    async fn from_request(req: Request, state: &S) -> Result<Self, Self::Rejection> {
        match Json::<T>::from_request(req, state).await {
            Ok(Json(v)) => Ok(ApiJson(v)),
            Err(rej) => {
                let status = match rej {
                    JsonRejection::MissingJsonContentType(_) => StatusCode::UNSUPPORTED_MEDIA_TYPE,
                    JsonRejection::JsonSyntaxError(_) => StatusCode::BAD_REQUEST,
                    _ => StatusCode::UNPROCESSABLE_ENTITY,
                };
                Err(ApiError::request(status, "invalid_request", rej.body_text()))
            }
        }
    }
}

async fn blocking<T: Send + 'static>(
    f: impl FnOnce() -> Result<T, PipelineError> + Send + 'static,
) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f).await.map_err(|e| {
        ApiError::request(StatusCode::INTERNAL_SERVER_ERROR, "internal", format!("worker failed: {e}"))
    })?
    .map_err(ApiError::from)
}

fn parse_task(q: &HashMap<String, String>) -> Result<Option<TaskKind>, ApiError> {
    q.get("task")
        .map(|t| {
            TaskKind::parse(t).ok_or_else(|| {
                ApiError::request(StatusCode::BAD_REQUEST, "invalid_request", format!("unknown task {t:?}"))
            })
        })
        .transpose()
}

async fn health() -> Json<serde_json::Value> {
    Json(json!({"status": "ok"}))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Base64Image {
    png_base64: String,
}

#[derive(Serialize)]
struct UploadReply {
    image_ref: String,
    height: usize,
    width: usize,
    channels: usize,
}

async fn upload(State(st): State<Shared>, req: Request) -> Result<Json<UploadReply>, ApiError> {
    let ctype = req
        .headers()
        .get(header::CONTENT_TYPE)
        .and_then(|v| v.to_str().ok())
        .unwrap_or("")
        .to_ascii_lowercase();
    let bytes: Vec<u8> = if ctype.starts_with("multipart/form-data") {
        let mut mp = Multipart::from_request(req, &st)
            .await
            .map_err(|e| ApiError::request(StatusCode::BAD_REQUEST, "invalid_request", e.body_text()))?;
        let mut found = None;
        while let Some(field) = mp
            .next_field()
            .await
            .map_err(|e| ApiError::request(StatusCode::BAD_REQUEST, "invalid_request", e.body_text()))?
        {
            if field.name() == Some("image") || field.file_name().is_some() {
                let data = field.bytes().await.map_err(|e| {
                    ApiError::request(StatusCode::BAD_REQUEST, "invalid_request", e.body_text())
                })?;
                found = Some(data.to_vec());
                break;
            }
        }
        found.ok_or_else(|| {
            ApiError::request(StatusCode::BAD_REQUEST, "invalid_request", "multipart body has no image field")
        })?
    } else if ctype.starts_with("application/json") {
        let ApiJson(b) = ApiJson::<Base64Image>::from_request(req, &st).await?;
        base64::engine::general_purpose::STANDARD
            .decode(b.png_base64.trim())
            .map_err(|e| ApiError::request(StatusCode::BAD_REQUEST, "invalid_request", format!("bad base64: {e}")))?
    } else {
        Bytes::from_request(req, &st)
            .await
            .map_err(|e| ApiError::request(StatusCode::BAD_REQUEST, "invalid_request", e.body_text()))?
            .to_vec()
    };
    let reply = blocking(move || {
        let (image_ref, img) = st.workbench.upload_image(&bytes)?;
        Ok(UploadReply {
            image_ref,
            height: img.height(),
            width: img.width(),
            channels: img.channels(),
        })
    })
    .await?;
    Ok(Json(reply))
}

async fn models(
    State(st): State<Shared>,
    Query(q): Query<HashMap<String, String>>,
) -> Result<Json<Vec<ModelDescriptor>>, ApiError> {
    let task = parse_task(&q)?;
    let reg = &st.workbench.models;
    let list = match task {
        Some(t) => reg.list_models(t).into_iter().cloned().collect(),
        None => reg.all().cloned().collect(),
    };
    Ok(Json(list))
}

#[derive(Serialize)]
struct MethodsReply {
    gradient: Vec<MethodDescriptor>,
    perturbation: Vec<MethodDescriptor>,
}

async fn methods(
    State(st): State<Shared>,
    Query(q): Query<HashMap<String, String>>,
) -> Result<Json<MethodsReply>, ApiError> {
    let task = parse_task(&q)?;
    let mut all: Vec<MethodDescriptor> = Vec::new();
    for t in task.map_or(TaskKind::ALL.to_vec(), |t| vec![t]) {
        for d in st.workbench.methods.list(t) {
            if !all.iter().any(|x| x.method_id == d.method_id) {
                all.push(d.clone());
            }
        }
    }
    let (gradient, perturbation) = all
        .into_iter()
        .partition(|d| d.mechanism == lumen_core::Mechanism::Gradient);
    Ok(Json(MethodsReply {
        gradient,
        perturbation,
    }))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PredictBody {
    image_ref: String,
    model_id: String,
}

async fn predict(
    State(st): State<Shared>,
    ApiJson(b): ApiJson<PredictBody>,
) -> Result<Json<serde_json::Value>, ApiError> {
    let v = blocking(move || {
        let pred = st.workbench.predict(&b.image_ref, &b.model_id)?;
        let t = top1(&pred).map_err(|e| PipelineError::new(Stage::Predict, e))?;
        let labels = &st
            .workbench
            .models
            .descriptor(&b.model_id)
            .map_err(|e| PipelineError::new(Stage::Predict, e))?
            .label_set;
        Ok(json!({"prediction": pred, "top1": t, "label_set": labels}))
    })
    .await?;
    Ok(Json(v))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SaliencyBody {
    image_ref: String,
    model_id: String,
    method_id: String,
    #[serde(default)]
    target: TargetChoice,
}

async fn saliency(
    State(st): State<Shared>,
    ApiJson(b): ApiJson<SaliencyBody>,
) -> Result<Json<crate::pipeline::SaliencyOutcome>, ApiError> {
    let out = blocking(move || st.workbench.saliency(&b.image_ref, &b.model_id, &b.method_id, &b.target)).await?;
    Ok(Json(out))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ExplainBody {
    image_ref: String,
    task: TaskKind,
    model_id: String,
    method_id: String,
    #[serde(default)]
    target: TargetChoice,
    ground_truth: GroundTruth,
    #[serde(default)]
    lvm: Option<LvmConfig>,
}

async fn explain(
    State(st): State<Shared>,
    ApiJson(b): ApiJson<ExplainBody>,
) -> Result<Json<crate::pipeline::ExplainOutcome>, ApiError> {
    let _slot = st
        .explain_slots
        .acquire()
        .await
        .map_err(|_| ApiError::request(StatusCode::SERVICE_UNAVAILABLE, "shutting_down", "server is stopping"))?;
    let input = ExplainInput {
        image_ref: b.image_ref,
        task: b.task,
        model_id: b.model_id,
        method_id: b.method_id,
        target: b.target,
        ground_truth: b.ground_truth,
        lvm: b.lvm.unwrap_or_else(|| st.lvm.clone()),
    };
    let st2 = st.clone();
    let out = blocking(move || st2.workbench.run_explanation(&input)).await?;
    Ok(Json(out))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RecordRef {
    record_id: u64,
    reference: String,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct EvaluateBody {
    task: TaskKind,
    #[serde(default)]
    pairs: Vec<EvalPair>,
    /// Scores stored explanations against the given references.
    #[serde(default)]
    records: Vec<RecordRef>,
}

async fn evaluate(
    State(st): State<Shared>,
    ApiJson(b): ApiJson<EvaluateBody>,
) -> Result<Json<crate::store::MetricRecord>, ApiError> {
    let out = blocking(move || {
        let mut pairs = b.pairs;
        for r in b.records {
            let entry = st
                .workbench
                .store
                .get(r.record_id)
                .map_err(|e| PipelineError::new(Stage::Evaluate, e))?;
            let LedgerEntry::Explanation(rec) = entry else {
                return Err(PipelineError::invalid(
                    Stage::Evaluate,
                    format!("record {} is not an explanation", r.record_id),
                ));
            };
            pairs.push(EvalPair {
                sample_id: format!("record-{}", rec.record_id),
                task: Some(rec.request.task),
                hypothesis: rec.explanation_text,
                reference: r.reference,
            });
        }
        st.workbench.evaluate(&pairs, b.task)
    })
    .await?;
    Ok(Json(out))
}

fn store_error(e: StoreError) -> ApiError {
    PipelineError::new(Stage::Input, e).into()
}

async fn run_by_id(State(st): State<Shared>, Path(id): Path<String>) -> Result<Json<LedgerEntry>, ApiError> {
    let id: u64 = id
        .parse()
        .map_err(|_| ApiError::request(StatusCode::BAD_REQUEST, "invalid_request", format!("bad record id {id:?}")))?;
    st.workbench.store.get(id).map(Json).map_err(store_error)
}

async fn runs(
    State(st): State<Shared>,
    Query(q): Query<HashMap<String, String>>,
) -> Result<Json<Vec<LedgerEntry>>, ApiError> {
    let task = parse_task(&q)?;
    let limit = match q.get("limit") {
        Some(l) => l.parse().map_err(|_| {
            ApiError::request(StatusCode::BAD_REQUEST, "invalid_request", format!("bad limit {l:?}"))
        })?,
        None => DEFAULT_RUN_LIMIT,
    };
    Ok(Json(st.workbench.store.list(task, limit)))
}

fn content_type(bytes: &[u8]) -> &'static str {
    if bytes.starts_with(b"\x89PNG\r\n\x1a\n") {
        "image/png"
    } else if bytes.first() == Some(&b'{') {
        "application/json"
    } else {
        "application/octet-stream"
    }
}

async fn blob(State(st): State<Shared>, Path(key): Path<String>) -> Result<Response, ApiError> {
    let bytes = st.workbench.store.get_blob(&key).map_err(store_error)?;
    let ct = HeaderValue::from_static(content_type(&bytes));
    Ok(([(header::CONTENT_TYPE, ct)], bytes).into_response())
}

async fn fallback() -> ApiError {
    ApiError::request(StatusCode::NOT_FOUND, "route_not_found", "no such endpoint")
}

pub fn router(state: Arc<AppState>) -> Router {
    let api = Router::new()
        .route("/health", get(health))
        .route("/images", post(upload))
        .route("/models", get(models))
        .route("/methods", get(methods))
        .route("/predict", post(predict))
        .route("/saliency", post(saliency))
        .route("/explain", post(explain))
        .route("/evaluate", post(evaluate))
        .route("/runs", get(runs))
        .route("/runs/{id}", get(run_by_id))
        .route("/blobs/{key}", get(blob));
    Router::new()
        .nest("/api/v1", api)
        .fallback(fallback)
        .layer(DefaultBodyLimit::max(MAX_UPLOAD_BYTES))
        .with_state(state)
}

/// Binds `addr`, reporting an occupied port as [`ServeError::PortInUse`].
pub fn bind(addr: &str) -> Result<std::net::TcpListener, ServeError> {
    match std::net::TcpListener::bind(addr) {
        Ok(l) => {
            l.set_nonblocking(true)?;
            Ok(l)
        }
        Err(e) if e.kind() == std::io::ErrorKind::AddrInUse => Err(ServeError::PortInUse(addr.into())),
        Err(source) => Err(ServeError::Bind {
            addr: addr.into(),
            source,
        }),
    }
}

/// Serves until `shutdown` resolves, then drains in-flight requests.
pub async fn serve(
    listener: std::net::TcpListener,
    state: Arc<AppState>,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> Result<(), ServeError> {
    let listener = tokio::net::TcpListener::from_std(listener)?;
    let addr: SocketAddr = listener.local_addr()?;
    tracing::info!(%addr, "listening");
    axum::serve(listener, router(state))
        .with_graceful_shutdown(shutdown)
        .await?;
    tracing::info!("stopped");
    Ok(())
}

/// Resolves on Ctrl-C or SIGTERM.
pub async fn shutdown_signal() {
    let ctrl_c = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    #[cfg(unix)]
    let term = async {
        match tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()) {
            Ok(mut s) => {
                s.recv().await;
            }
            Err(_) => std::future::pending::<()>().await,
        }
    };
    #[cfg(not(unix))]
    let term = std::future::pending::<()>();
    tokio::select! {
        _ = ctrl_c => {},
        _ = term => {},
    }
}
