//! The `lumen` command line.
//!
//! Exit codes: 0 on success, 1 on a domain error, 2 on a usage error.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use lumen_core::saliency::generate_masks;
use lumen_core::saliency::perturbation::PerturbationParams;
use lumen_core::{GroundTruth, TaskKind};
use serde::{Deserialize, Serialize};

use crate::config::Config;
use crate::dataset::{ingest_dataset, DatasetFormat, DatasetManifest};
use crate::lvm::{LvmConfig, LvmGateway};
use crate::pipeline::{BenchReport, EvalPair, ExplainInput, TargetChoice, Workbench};
use crate::store::RunStore;
use crate::{image_io, maskio, report, server};

pub const EXIT_OK: i32 = 0;
pub const EXIT_DOMAIN: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "lumen", version, about = "Saliency explanations with vision-language narration and text-metric scoring")]
pub struct Cli {
    /// TOML config file; LUMEN_* environment variables override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Run store directory (overrides the config).
    #[arg(long, global = true)]
    store: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the HTTP API.
    Serve {
        #[arg(long)]
        bind: Option<String>,
    },
    /// Explain one image and persist the record.
    Explain(ExplainArgs),
    /// Score hypothesis/reference pairs from a JSON-lines file.
    Eval {
        #[arg(long)]
        pairs: PathBuf,
        #[arg(long, value_parser = parse_task)]
        task: TaskKind,
        #[arg(long, value_enum, default_value = "pretty")]
        format: OutputFormat,
        /// Also append the report to the run ledger.
        #[arg(long)]
        persist: bool,
    },
    /// Explain every dataset item with a reference text and report metrics.
    Bench(BenchArgs),
    /// Precompute a RISE mask set.
    Masks {
        /// Cell grid as HxW.
        #[arg(long, value_parser = parse_dims)]
        grid: (usize, usize),
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output mask size as HxW.
        #[arg(long, value_parser = parse_dims)]
        size: (usize, usize),
        #[arg(long, default_value_t = 0.5)]
        keep_prob: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build a dataset manifest and save it in the store.
    Ingest {
        #[arg(long)]
        root: PathBuf,
        #[arg(long, value_parser = parse_format)]
        format: DatasetFormat,
        #[arg(long)]
        id: Option<String>,
    },
}

#[derive(Debug, Args)]
struct ExplainArgs {
    /// PNG file.
    #[arg(long)]
    image: PathBuf,
    #[arg(long, value_parser = parse_task)]
    task: TaskKind,
    #[arg(long)]
    model: String,
    #[arg(long)]
    method: String,
    /// top1, a class id, class:<name> or det:<index>.
    #[arg(long, default_value = "top1", value_parser = parse_target)]
    target: TargetChoice,
    /// Class id or name, a label-map PNG, or ground-truth JSON (inline or file).
    /// Defaults to `<image>.gt.json`.
    #[arg(long)]
    ground_truth: Option<String>,
    /// Provider id; other provider settings come from the config.
    #[arg(long)]
    lvm: Option<String>,
    #[arg(long)]
    json: bool,
}

#[derive(Debug, Args)]
struct BenchArgs {
    /// Suite file listing several runs.
    #[arg(long, conflicts_with_all = ["dataset", "model", "method"])]
    suite: Option<PathBuf>,
    /// Dataset id in the store, or a manifest JSON path.
    #[arg(long, requires_all = ["model", "method"])]
    dataset: Option<String>,
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    method: Option<String>,
    #[arg(long, default_value = "top1", value_parser = parse_target)]
    target: TargetChoice,
    #[arg(long)]
    lvm: Option<String>,
    /// Write the full report as JSON.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write the per-task table as CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
enum OutputFormat {
    Pretty,
    Csv,
    Json,
}

fn parse_task(s: &str) -> Result<TaskKind, String> {
    TaskKind::parse(s).ok_or_else(|| format!("unknown task {s:?} (classification, segmentation, detection)"))
}

fn parse_format(s: &str) -> Result<DatasetFormat, String> {
    DatasetFormat::parse(s).map_err(|e| e.to_string())
}

fn parse_target(s: &str) -> Result<TargetChoice, String> {
    s.parse()
}

fn parse_dims(s: &str) -> Result<(usize, usize), String> {
    let (h, w) = s.split_once(['x', 'X']).ok_or_else(|| format!("expected HxW, got {s:?}"))?;
    let p = |v: &str| v.trim().parse::<usize>().map_err(|_| format!("bad dimension in {s:?}"));
    Ok((p(h)?, p(w)?))
}

/// A failure reported with exit code 1.
struct DomainFailure(String);

impl<E: std::fmt::Display> From<E> for DomainFailure {
    fn from(e: E) -> Self {
        DomainFailure(e.to_string())
    }
}

type CmdResult = Result<(), DomainFailure>;

/// Several bench runs reported together, one table row per run.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Suite {
    #[serde(default)]
    pub lvm: Option<String>,
    #[serde(default)]
    pub perturbation: Option<PerturbationParams>,
    pub run: Vec<SuiteRun>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SuiteRun {
    /// Dataset directory, relative to the suite file.
    pub root: PathBuf,
    pub format: String,
    #[serde(default)]
    pub id: Option<String>,
    pub model: String,
    pub method: String,
    #[serde(default)]
    pub target: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SuiteReport {
    pub runs: Vec<BenchReport>,
}

fn init_logging(level: &str) {
    let level = level.parse().unwrap_or(tracing::Level::INFO);
    let _ = tracing_subscriber::fmt()
        .with_max_level(level)
        .with_writer(std::io::stderr)
        .with_ansi(false)
        .try_init();
}

fn lvm_for(config: &Config, provider: Option<&str>) -> LvmConfig {
    match provider {
        Some(p) if p != config.lvm.provider => LvmConfig {
            provider: p.to_string(),
            ..config.lvm.clone()
        },
        _ => config.lvm.clone(),
    }
}

fn open_workbench(config: &Config) -> Result<Workbench, DomainFailure> {
    let store = RunStore::open(&config.store)?;
    let mut wb = Workbench::with_parts(store, lumen_core::toy::toy_registry(), LvmGateway::with_builtins());
    wb.params = config.perturbation.clone();
    wb.overlay_alpha = config.overlay_alpha;
    Ok(wb)
}

fn ground_truth_arg(
    arg: Option<&str>,
    image: &Path,
    task: TaskKind,
    label_set: &[String],
) -> Result<GroundTruth, DomainFailure> {
    let text = match arg {
        Some(a) => a.to_string(),
        None => {
            let side = image.with_extension("gt.json");
            if !side.is_file() {
                return Err(DomainFailure(format!(
                    "no ground truth: pass --ground-truth or provide {}",
                    side.display()
                )));
            }
            side.display().to_string()
        }
    };
    let gt = if text.trim_start().starts_with('{') {
        serde_json::from_str(&text)?
    } else if text.ends_with(".json") {
        serde_json::from_str(&std::fs::read_to_string(&text).map_err(|e| format!("{text}: {e}"))?)?
    } else if text.ends_with(".png") {
        let bytes = std::fs::read(&text).map_err(|e| format!("{text}: {e}"))?;
        GroundTruth::label_map(image_io::decode_label_png(&bytes)?)
    } else if let Ok(id) = text.parse::<usize>() {
        GroundTruth::label(id)
    } else {
        let id = label_set
            .iter()
            .position(|n| *n == text)
            .ok_or_else(|| format!("class {text:?} not in label set {label_set:?}"))?;
        GroundTruth::label(id)
    };
    if gt.task() != task {
        return Err(DomainFailure(format!("ground truth is {}, task is {task}", gt.task())));
    }
    Ok(gt)
}

fn cmd_explain(config: &Config, a: ExplainArgs, out: &mut dyn Write) -> CmdResult {
    let wb = open_workbench(config)?;
    let bytes = std::fs::read(&a.image).map_err(|e| format!("{}: {e}", a.image.display()))?;
    let labels = wb.models.descriptor(&a.model)?.label_set.clone();
    let ground_truth = ground_truth_arg(a.ground_truth.as_deref(), &a.image, a.task, &labels)?;
    let (image_ref, _) = wb.upload_image(&bytes)?;
    let outcome = wb.run_explanation(&ExplainInput {
        image_ref,
        task: a.task,
        model_id: a.model,
        method_id: a.method,
        target: a.target,
        ground_truth,
        lvm: lvm_for(config, a.lvm.as_deref()),
    })?;
    if a.json {
        writeln!(out, "{}", serde_json::to_string_pretty(&outcome.record)?)?;
    } else {
        let r = &outcome.record;
        writeln!(out, "record_id: {}", r.record_id)?;
        writeln!(out, "verdict: {}", r.verdict.as_str())?;
        writeln!(out, "overlay: {}", r.overlay_ref)?;
        writeln!(out, "explanation: {}", r.explanation_text)?;
    }
    Ok(())
}

/// Reads `{sample_id, task, hypothesis, reference}` lines; blank lines are skipped.
pub fn read_pairs(path: &Path) -> Result<Vec<EvalPair>, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| format!("{}:{}: {e}", path.display(), i + 1)))
        .collect()
}

fn cmd_eval(config: &Config, pairs: &Path, task: TaskKind, format: OutputFormat, persist: bool, out: &mut dyn Write) -> CmdResult {
    let pairs: Vec<EvalPair> = read_pairs(pairs)?
        .into_iter()
        .filter(|p| p.task.is_none_or(|t| t == task))
        .collect();
    let wb = open_workbench(config)?;
    let report = if persist {
        wb.evaluate(&pairs, task)?.report
    } else {
        wb.score(&pairs, task)?
    };
    match format {
        OutputFormat::Pretty => write!(out, "{}", report::samples_pretty(&report))?,
        OutputFormat::Csv => write!(out, "{}", report::samples_csv(&report))?,
        OutputFormat::Json => writeln!(out, "{}", serde_json::to_string_pretty(&report)?)?,
    }
    Ok(())
}

fn load_manifest(wb: &Workbench, dataset: &str) -> Result<DatasetManifest, DomainFailure> {
    let p = Path::new(dataset);
    if p.is_file() {
        Ok(DatasetManifest::load(p)?)
    } else {
        Ok(DatasetManifest::load_by_id(&wb.store.datasets_dir(), dataset)?)
    }
}

fn cmd_bench(config: &Config, a: BenchArgs, out: &mut dyn Write) -> CmdResult {
    let mut wb = open_workbench(config)?;
    let mut runs = Vec::new();
    if let Some(suite_path) = &a.suite {
        let text = std::fs::read_to_string(suite_path).map_err(|e| format!("{}: {e}", suite_path.display()))?;
        let suite: Suite = toml::from_str(&text).map_err(|e| format!("{}: {e}", suite_path.display()))?;
        if let Some(p) = suite.perturbation {
            wb.params = p;
        }
        let base = suite_path.parent().unwrap_or(Path::new("."));
        let lvm = lvm_for(config, a.lvm.as_deref().or(suite.lvm.as_deref()));
        for run in &suite.run {
            let format = DatasetFormat::parse(&run.format)?;
            let manifest = ingest_dataset(&base.join(&run.root), format, run.id.as_deref())?;
            let target: TargetChoice = run.target.as_deref().unwrap_or("top1").parse()?;
            runs.push(wb.bench(&manifest, &run.model, &run.method, &target, &lvm)?);
        }
    } else {
        let (Some(dataset), Some(model), Some(method)) = (&a.dataset, &a.model, &a.method) else {
            return Err(DomainFailure("bench needs --suite or --dataset with --model and --method".into()));
        };
        let manifest = load_manifest(&wb, dataset)?;
        let lvm = lvm_for(config, a.lvm.as_deref());
        runs.push(wb.bench(&manifest, model, method, &a.target, &lvm)?);
    }
    let reports: Vec<_> = runs.iter().map(|r| r.metrics.clone()).collect();
    write!(out, "{}", report::table_pretty(&reports))?;
    if let Some(path) = &a.out {
        let json = serde_json::to_string_pretty(&SuiteReport { runs })? + "\n";
        std::fs::write(path, json).map_err(|e| format!("{}: {e}", path.display()))?;
    }
    if let Some(path) = &a.csv {
        std::fs::write(path, report::table_csv(&reports)).map_err(|e| format!("{}: {e}", path.display()))?;
    }
    Ok(())
}

fn cmd_serve(config: &Config, bind: Option<String>) -> CmdResult {
    let addr = bind.unwrap_or_else(|| config.server.bind.clone());
    let wb = open_workbench(config)?;
    let listener = server::bind(&addr)?;
    let state = Arc::new(server::AppState::new(wb, config.lvm.clone(), config.server.workers));
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    let result = rt.block_on(server::serve(listener, state.clone(), server::shutdown_signal()));
    drop(rt);
    drop(state);
    Ok(result?)
}

/// Runs the CLI and returns the process exit code.
pub fn run(args: impl IntoIterator<Item = impl Into<OsString> + Clone>, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if e.use_stderr() {
                write!(err, "{text}")
            } else {
                write!(out, "{text}")
            };
            return code;
        }
    };
    let mut config = match Config::resolve(cli.config.as_deref()) {
        Ok(c) => c,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            return EXIT_USAGE;
        }
    };
    if let Some(s) = cli.store {
        config.store = s;
    }
    init_logging(&config.log);
    let result = match cli.command {
        Command::Serve { bind } => cmd_serve(&config, bind),
        Command::Explain(a) => cmd_explain(&config, a, out),
        Command::Eval {
            pairs,
            task,
            format,
            persist,
        } => cmd_eval(&config, &pairs, task, format, persist, out),
        Command::Bench(a) => cmd_bench(&config, a, out),
        Command::Masks {
            grid,
            n,
            seed,
            size,
            keep_prob,
            out: path,
        } => (|| -> CmdResult {
            let masks = generate_masks(n, grid, keep_prob, size, seed)?;
            let h = maskio::write_masks(&path, &masks)?;
            writeln!(out, "wrote {} masks of {}x{} to {}", h.count, h.height, h.width, path.display())?;
            Ok(())
        })(),
        Command::Ingest { root, format, id } => (|| -> CmdResult {
            let store = RunStore::open(&config.store)?;
            let manifest = ingest_dataset(&root, format, id.as_deref())?;
            let path = manifest.save(&store.datasets_dir())?;
            writeln!(
                out,
                "dataset {} ({}): {} items, {} classes -> {}",
                manifest.dataset_id,
                manifest.task,
                manifest.items.len(),
                manifest.label_set.len(),
                path.display()
            )?;
            Ok(())
        })(),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(DomainFailure(m)) => {
            let _ = writeln!(err, "error: {m}");
            EXIT_DOMAIN
        }
    }
}
