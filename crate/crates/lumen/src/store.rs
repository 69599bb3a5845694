//! Filesystem run store: content-addressed blobs plus an append-only ledger.
//!
//! Layout under the root:
//!
//! ```text
//! blobs/<first two hex>/<sha256 hex>
//! ledger.jsonl
//! datasets/<dataset_id>.json
//! ```
//!
//! Blobs are written to a temporary file and renamed into place, and are
//! re-hashed on every read. Ledger appends go through one mutex-guarded
//! writer and are synced before the call returns.

use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;

use lumen_core::prompt::{BlobLookup, ExplanationRecord};
use lumen_core::textmetrics::MetricReport;
use lumen_core::TaskKind;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("store not writable at {path}: {source}")]
    Unwritable {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("blob not found: {0}")]
    BlobNotFound(String),
    #[error("blob {0} does not match its content hash")]
    BlobCorrupt(String),
    #[error("malformed blob key: {0}")]
    InvalidKey(String),
    #[error("ledger line {line}: {message}")]
    LedgerCorrupt { line: usize, message: String },
    #[error("record not found: {0}")]
    RecordNotFound(u64),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> StoreError + '_ {
    move |source| StoreError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Lowercase hex SHA-256 of `bytes`.
pub fn blob_key(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn valid_key(key: &str) -> bool {
    key.len() == 64 && key.bytes().all(|b| b.is_ascii_digit() || (b'a'..=b'f').contains(&b))
}

/// A persisted metric report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub record_id: u64,
    pub created_at: String,
    pub report: MetricReport,
}

#[allow(clippy::large_enum_variant)]
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LedgerEntry {
    Explanation(ExplanationRecord),
    MetricReport(MetricRecord),
}

impl LedgerEntry {
    pub fn record_id(&self) -> u64 {
        match self {
            LedgerEntry::Explanation(r) => r.record_id,
            LedgerEntry::MetricReport(r) => r.record_id,
        }
    }

    pub fn task(&self) -> TaskKind {
        match self {
            LedgerEntry::Explanation(r) => r.request.task,
            LedgerEntry::MetricReport(r) => r.report.task,
        }
    }
}

struct Ledger {
    file: File,
    entries: Vec<LedgerEntry>,
}

pub struct RunStore {
    root: PathBuf,
    ledger: Mutex<Ledger>,
    tmp_counter: AtomicU64,
}

impl std::fmt::Debug for RunStore {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RunStore").field("root", &self.root).finish()
    }
}

impl RunStore {
    /// Opens or creates a store, replaying the existing ledger.
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let root = root.into();
        let unwritable = |source| StoreError::Unwritable {
            path: root.display().to_string(),
            source,
        };
        for dir in ["blobs", "datasets", "tmp"] {
            fs::create_dir_all(root.join(dir)).map_err(unwritable)?;
        }
        let ledger_path = root.join("ledger.jsonl");
        let mut entries = Vec::new();
        if ledger_path.exists() {
            let f = File::open(&ledger_path).map_err(io_err(&ledger_path))?;
            for (i, line) in BufReader::new(f).lines().enumerate() {
                let line = line.map_err(io_err(&ledger_path))?;
                if line.trim().is_empty() {
                    continue;
                }
                let entry: LedgerEntry =
                    serde_json::from_str(&line).map_err(|e| StoreError::LedgerCorrupt {
                        line: i + 1,
                        message: e.to_string(),
                    })?;
                entries.push(entry);
            }
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&ledger_path)
            .map_err(unwritable)?;
        let probe = root.join("tmp").join(".probe");
        fs::write(&probe, b"").map_err(unwritable)?;
        let _ = fs::remove_file(&probe);
        Ok(Self {
            root,
            ledger: Mutex::new(Ledger { file, entries }),
            tmp_counter: AtomicU64::new(0),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn blob_path(&self, key: &str) -> PathBuf {
        self.root.join("blobs").join(&key[..2]).join(key)
    }

    /// Stores `bytes` and returns their key. Re-putting identical bytes is a no-op.
    pub fn put_blob(&self, bytes: &[u8]) -> Result<String, StoreError> {
        let key = blob_key(bytes);
        let path = self.blob_path(&key);
        if path.exists() {
            return Ok(key);
        }
        let dir = path.parent().expect("blob path has a parent");
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        let n = self.tmp_counter.fetch_add(1, Ordering::Relaxed);
        let tmp = self
            .root
            .join("tmp")
            .join(format!("{}-{}-{n}", &key[..16], std::process::id()));
        {
            let mut f = File::create(&tmp).map_err(io_err(&tmp))?;
            f.write_all(bytes).map_err(io_err(&tmp))?;
            f.sync_all().map_err(io_err(&tmp))?;
        }
        fs::rename(&tmp, &path).map_err(io_err(&path))?;
        Ok(key)
    }

    /// Reads a blob and verifies it against its key.
    pub fn get_blob(&self, key: &str) -> Result<Vec<u8>, StoreError> {
        if !valid_key(key) {
            return Err(StoreError::InvalidKey(key.to_string()));
        }
        let path = self.blob_path(key);
        let bytes = match fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                return Err(StoreError::BlobNotFound(key.to_string()))
            }
            Err(e) => return Err(io_err(&path)(e)),
        };
        if blob_key(&bytes) != key {
            return Err(StoreError::BlobCorrupt(key.to_string()));
        }
        Ok(bytes)
    }

    pub fn has_blob(&self, key: &str) -> bool {
        valid_key(key) && self.blob_path(key).is_file()
    }

    fn append(&self, make: impl FnOnce(u64) -> LedgerEntry) -> Result<LedgerEntry, StoreError> {
        let mut ledger = self.ledger.lock().unwrap_or_else(|e| e.into_inner());
        let id = ledger.entries.last().map_or(1, |e| e.record_id() + 1);
        let entry = make(id);
        let mut line = serde_json::to_string(&entry).expect("ledger entries serialize");
        line.push('\n');
        let path = self.root.join("ledger.jsonl");
        ledger.file.write_all(line.as_bytes()).map_err(io_err(&path))?;
        ledger.file.sync_data().map_err(io_err(&path))?;
        ledger.entries.push(entry.clone());
        Ok(entry)
    }

    /// Appends an explanation record, assigning the next record id.
    pub fn append_explanation(
        &self,
        make: impl FnOnce(u64) -> ExplanationRecord,
    ) -> Result<ExplanationRecord, StoreError> {
        match self.append(|id| LedgerEntry::Explanation(make(id)))? {
            LedgerEntry::Explanation(r) => Ok(r),
            LedgerEntry::MetricReport(_) => unreachable!(),
        }
    }

    pub fn append_report(&self, report: MetricReport, created_at: String) -> Result<MetricRecord, StoreError> {
        let entry = self.append(|record_id| {
            LedgerEntry::MetricReport(MetricRecord {
                record_id,
                created_at,
                report,
            })
        })?;
        match entry {
            LedgerEntry::MetricReport(r) => Ok(r),
            LedgerEntry::Explanation(_) => unreachable!(),
        }
    }

    pub fn get(&self, record_id: u64) -> Result<LedgerEntry, StoreError> {
        let ledger = self.ledger.lock().unwrap_or_else(|e| e.into_inner());
        ledger
            .entries
            .binary_search_by_key(&record_id, LedgerEntry::record_id)
            .map(|i| ledger.entries[i].clone())
            .map_err(|_| StoreError::RecordNotFound(record_id))
    }

    /// Most recent entries first, optionally filtered by task.
    pub fn list(&self, task: Option<TaskKind>, limit: usize) -> Vec<LedgerEntry> {
        let ledger = self.ledger.lock().unwrap_or_else(|e| e.into_inner());
        ledger
            .entries
            .iter()
            .rev()
            .filter(|e| task.is_none_or(|t| e.task() == t))
            .take(limit)
            .cloned()
            .collect()
    }

    pub fn count(&self) -> usize {
        self.ledger.lock().unwrap_or_else(|e| e.into_inner()).entries.len()
    }

    pub fn datasets_dir(&self) -> PathBuf {
        self.root.join("datasets")
    }
}

impl BlobLookup for RunStore {
    fn contains(&self, blob: &str) -> bool {
        self.has_blob(blob)
    }
}
