//! Helpers shared by the service suites and the acceptance gate. Checks
//! return a short summary or a failure reason.
#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::thread::JoinHandle;

use lumen::lvm::{LvmConfig, LvmGateway, LvmRequest, LvmTransport, TransportError, TransportReply};
use lumen::pipeline::Workbench;
use lumen::server::{self, AppState};
use lumen::store::RunStore;
use serde_json::{json, Value};

pub const FAILING_PROVIDER: &str = "failing";

pub fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}

pub fn fixture_bytes(rel: &str) -> Vec<u8> {
    std::fs::read(fixtures().join(rel)).unwrap_or_else(|e| panic!("{rel}: {e}"))
}

/// Always reports an outage.
pub struct FailingTransport;

impl LvmTransport for FailingTransport {
    fn requires_credential(&self) -> bool {
        false
    }

    fn send(&self, _: &LvmRequest<'_>) -> Result<TransportReply, TransportError> {
        Err(TransportError::Transient("provider down".into()))
    }
}

/// Workbench over `store` with the builtin providers plus [`FAILING_PROVIDER`]
/// and a small mask budget.
pub fn workbench(store: &Path) -> Workbench {
    let gateway = LvmGateway::with_builtins();
    gateway
        .register_provider(FAILING_PROVIDER, Arc::new(FailingTransport))
        .unwrap();
    let mut wb = Workbench::with_parts(RunStore::open(store).unwrap(), lumen_core::toy::toy_registry(), gateway);
    wb.params.n_masks = 200;
    wb
}

/// API server on an ephemeral port; stops when dropped.
pub struct TestServer {
    pub base: String,
    pub state: Arc<AppState>,
    stop: Option<tokio::sync::oneshot::Sender<()>>,
    thread: Option<JoinHandle<()>>,
}

impl TestServer {
    pub fn start(wb: Workbench) -> Self {
        let listener = server::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let state = Arc::new(AppState::new(wb, LvmConfig::mock(), 2));
        let (tx, rx) = tokio::sync::oneshot::channel::<()>();
        let st = state.clone();
        let thread = std::thread::spawn(move || {
            let rt = tokio::runtime::Builder::new_multi_thread()
                .worker_threads(2)
                .enable_all()
                .build()
                .unwrap();
            rt.block_on(server::serve(listener, st, async {
                let _ = rx.await;
            }))
            .unwrap();
        });
        Self {
            base: format!("http://{addr}/api/v1"),
            state,
            stop: Some(tx),
            thread: Some(thread),
        }
    }
}

impl Drop for TestServer {
    fn drop(&mut self) {
        if let Some(tx) = self.stop.take() {
            let _ = tx.send(());
        }
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

pub fn client() -> reqwest::blocking::Client {
    let _ = rustls::crypto::ring::default_provider().install_default();
    reqwest::blocking::Client::new()
}

pub struct Reply {
    pub status: u16,
    pub body: Value,
}

fn reply(r: reqwest::blocking::Response) -> Result<Reply, String> {
    let status = r.status().as_u16();
    let text = r.text().map_err(|e| e.to_string())?;
    let body = serde_json::from_str(&text).map_err(|e| format!("status {status}, non-JSON body {text:?}: {e}"))?;
    Ok(Reply { status, body })
}

pub fn get(c: &reqwest::blocking::Client, url: &str) -> Result<Reply, String> {
    reply(c.get(url).send().map_err(|e| e.to_string())?)
}

pub fn post(c: &reqwest::blocking::Client, url: &str, body: &Value) -> Result<Reply, String> {
    reply(c.post(url).json(body).send().map_err(|e| e.to_string())?)
}

fn ok(step: &str, r: Reply) -> Result<Value, String> {
    if (200..300).contains(&r.status) {
        Ok(r.body)
    } else {
        Err(format!("{step}: status {} body {}", r.status, r.body))
    }
}

/// upload → predict → saliency → explain (mock) → evaluate, then reads the
/// run back. Every step must answer 2xx.
pub fn service_round_trip() -> Result<String, String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let srv = TestServer::start(workbench(dir.path()));
    let c = client();
    let b = &srv.base;

    ok("health", get(&c, &format!("{b}/health"))?)?;
    let png = fixture_bytes("classification/left/l1.png");
    let up = c
        .post(format!("{b}/images"))
        .header("content-type", "image/png")
        .body(png)
        .send()
        .map_err(|e| e.to_string())?;
    let up = ok("upload", reply(up)?)?;
    let image_ref = up["image_ref"].as_str().ok_or("upload: no image_ref")?.to_string();

    let pred = ok(
        "predict",
        post(&c, &format!("{b}/predict"), &json!({"image_ref": image_ref, "model_id": "toy_region_scorer"}))?,
    )?;
    if pred["top1"] != json!({"class": 0}) {
        return Err(format!("predict: top1 {}", pred["top1"]));
    }

    let sal = ok(
        "saliency",
        post(
            &c,
            &format!("{b}/saliency"),
            &json!({"image_ref": image_ref, "model_id": "toy_region_scorer", "method_id": "grad_cam"}),
        )?,
    )?;
    let overlay = sal["overlay_ref"].as_str().ok_or("saliency: no overlay_ref")?;
    let blob = c.get(format!("{b}/blobs/{overlay}")).send().map_err(|e| e.to_string())?;
    if blob.status() != 200 || blob.headers().get("content-type").map(|v| v.as_bytes()) != Some(b"image/png") {
        return Err(format!("blob: status {} for overlay", blob.status()));
    }

    let explain = ok(
        "explain",
        post(
            &c,
            &format!("{b}/explain"),
            &json!({
                "image_ref": image_ref,
                "task": "classification",
                "model_id": "toy_region_scorer",
                "method_id": "grad_cam",
                "ground_truth": {"task": "classification", "payload": {"kind": "label", "class_id": 0}},
            }),
        )?,
    )?;
    let record_id = explain["record"]["record_id"].as_u64().ok_or("explain: no record_id")?;
    if explain["record"]["verdict"] != json!("match") {
        return Err(format!("explain: verdict {}", explain["record"]["verdict"]));
    }

    let eval = ok(
        "evaluate",
        post(
            &c,
            &format!("{b}/evaluate"),
            &json!({
                "task": "classification",
                "pairs": [{"sample_id": "cat", "hypothesis": "the cat sat on the mat", "reference": "the cat is on the mat"}],
                "records": [{"record_id": record_id, "reference": "The model predicted left and the salient region is the blob on the left."}],
            }),
        )?,
    )?;
    let rouge = eval["report"]["per_sample"][0]["rouge_l_precision"].as_f64().ok_or("evaluate: no rouge")?;
    if (rouge - 5.0 / 6.0).abs() > 1e-12 {
        return Err(format!("evaluate: ROUGE-L precision {rouge}"));
    }

    let run = ok("runs/{id}", get(&c, &format!("{b}/runs/{record_id}"))?)?;
    if run["kind"] != json!("explanation") {
        return Err(format!("runs/{{id}}: kind {}", run["kind"]));
    }
    let runs = ok("runs", get(&c, &format!("{b}/runs?task=classification"))?)?;
    let n = runs.as_array().map_or(0, Vec::len);
    if n != 2 {
        return Err(format!("runs: expected explanation + report, got {n}"));
    }
    Ok(format!("9 requests 2xx, record {record_id} read back"))
}

fn blob_count(root: &Path) -> usize {
    let Ok(dirs) = std::fs::read_dir(root.join("blobs")) else {
        return 0;
    };
    dirs.flatten()
        .map(|d| std::fs::read_dir(d.path()).map_or(0, |f| f.count()))
        .sum()
}

/// A failing provider must leave the ledger and blob store untouched and
/// report the `lvm` stage.
pub fn explain_atomicity() -> Result<String, String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let srv = TestServer::start(workbench(dir.path()));
    let c = client();
    let b = &srv.base;
    let (image_ref, _) = srv
        .state
        .workbench
        .upload_image(&fixture_bytes("classification/right/r1.png"))
        .map_err(|e| e.to_string())?;
    let before = (srv.state.workbench.store.count(), blob_count(dir.path()));
    let r = post(
        &c,
        &format!("{b}/explain"),
        &json!({
            "image_ref": image_ref,
            "task": "classification",
            "model_id": "toy_region_scorer",
            "method_id": "rise",
            "ground_truth": {"task": "classification", "payload": {"kind": "label", "class_id": 1}},
            "lvm": {"provider": FAILING_PROVIDER, "max_retries": 0},
        }),
    )?;
    if r.status != 502 || r.body["stage"] != json!("lvm") {
        return Err(format!("failing provider: status {} body {}", r.status, r.body));
    }
    let after = (srv.state.workbench.store.count(), blob_count(dir.path()));
    if before != after {
        return Err(format!("ledger/blobs changed: {before:?} -> {after:?}"));
    }
    let missing = post(
        &c,
        &format!("{b}/saliency"),
        &json!({"image_ref": image_ref, "model_id": "toy_region_scorer", "method_id": "shap"}),
    )?;
    if missing.status != 404 || missing.body["code"] != json!("method_not_found") {
        return Err(format!("unknown method: status {} body {}", missing.status, missing.body));
    }
    Ok(format!("502 at stage lvm, {} records and {} blobs unchanged", after.0, after.1))
}

/// Runs the fixture suite through the CLI `runs` times, each against a fresh
/// store, and requires byte-identical JSON and CSV output.
pub fn bench_determinism(runs: usize) -> Result<String, String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let suite = fixtures().join("suite.toml");
    let mut outputs: Vec<(Vec<u8>, Vec<u8>)> = Vec::new();
    for i in 0..runs {
        let json_path = dir.path().join(format!("run{i}.json"));
        let csv_path = dir.path().join(format!("run{i}.csv"));
        let args = [
            "lumen".into(),
            "--store".into(),
            dir.path().join(format!("store{i}")).into_os_string(),
            "bench".into(),
            "--suite".into(),
            suite.clone().into_os_string(),
            "--out".into(),
            json_path.clone().into_os_string(),
            "--csv".into(),
            csv_path.clone().into_os_string(),
        ];
        let (mut out, mut err) = (Vec::new(), Vec::new());
        let code = lumen::cli::run(args, &mut out, &mut err);
        if code != 0 {
            return Err(format!("bench exit {code}: {}", String::from_utf8_lossy(&err)));
        }
        let j = std::fs::read(&json_path).map_err(|e| e.to_string())?;
        let c = std::fs::read(&csv_path).map_err(|e| e.to_string())?;
        outputs.push((j, c));
    }
    let first = &outputs[0];
    if let Some(i) = outputs.iter().position(|o| o != first) {
        return Err(format!("run {i} differs from run 0"));
    }
    let report: Value = serde_json::from_slice(&first.0).map_err(|e| e.to_string())?;
    let tasks = report["runs"].as_array().map_or(0, Vec::len);
    if tasks != 3 {
        return Err(format!("expected 3 task rows, got {tasks}"));
    }
    Ok(format!("{runs} runs x {tasks} tasks byte-identical"))
}
