//! Append-only, line-delimited record store.
//!
//! Layout under the store root:
//!
//! ```text
//! raw.jsonl  decomposed.jsonl  verified.jsonl  chained.jsonl
//! judgments.jsonl  decisions.jsonl  manifest.json  LOCK
//! ```
//!
//! Each record is one JSON line written with a single `write` followed by
//! `fsync`. A line without its trailing newline is a torn write: readers
//! ignore it and a writer truncates it on open. Every record names the
//! record it was derived from; appends whose parent is missing are refused.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::fs::{self, File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::RawReport;

const MANIFEST: &str = "manifest.json";
const LOCK: &str = "LOCK";
pub const STORE_FORMAT: &str = "comt-store-v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Raw,
    Decomposed,
    Verified,
    Chained,
    Judgments,
    Decisions,
}

impl Stage {
    pub const ALL: [Stage; 6] =
        [Stage::Raw, Stage::Decomposed, Stage::Verified, Stage::Chained, Stage::Judgments, Stage::Decisions];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Raw => "raw",
            Stage::Decomposed => "decomposed",
            Stage::Verified => "verified",
            Stage::Chained => "chained",
            Stage::Judgments => "judgments",
            Stage::Decisions => "decisions",
        }
    }

    fn file_name(self) -> String {
        format!("{}.jsonl", self.as_str())
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A record type that lives in exactly one stage of the store.
pub trait StageRecord: Serialize + DeserializeOwned {
    const STAGE: Stage;

    /// Unique within the stage.
    fn record_id(&self) -> String;

    /// The record this one was derived from. Only raw records have none.
    fn parent(&self) -> Option<(Stage, String)>;

    /// Record-level invariants beyond what deserialization enforces.
    fn check(&self) -> Result<(), String> {
        Ok(())
    }
}

impl StageRecord for RawReport {
    const STAGE: Stage = Stage::Raw;

    fn record_id(&self) -> String {
        self.report_id.clone()
    }

    fn parent(&self) -> Option<(Stage, String)> {
        None
    }

    fn check(&self) -> Result<(), String> {
        self.validate()
    }
}

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("store i/o error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("store at {0} is locked by another writer")]
    Locked(PathBuf),
    #[error("store opened read-only")]
    ReadOnly,
    #[error("schema mismatch in stage {stage}: {message}")]
    Schema { stage: Stage, message: String },
    #[error("corrupt record in stage {stage} at line {line}: {message}")]
    Corrupt { stage: Stage, line: usize, message: String },
    #[error("record {id} in stage {stage} references missing parent {parent_id} in stage {parent_stage}")]
    Lineage { stage: Stage, id: String, parent_stage: Stage, parent_id: String },
    #[error("record {id} already exists in stage {stage}")]
    Duplicate { stage: Stage, id: String },
    #[error("simulated crash after {written} records")]
    SimulatedCrash { written: usize },
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> StoreError + '_ {
    move |source| StoreError::Io { path: path.to_path_buf(), source }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageSummary {
    pub count: usize,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub stages: BTreeMap<Stage, StageSummary>,
}

/// Held for the writer's lifetime; the OS releases it when the file closes.
#[allow(dead_code)]
struct LockGuard(File);

pub struct RecordStore {
    root: PathBuf,
    ids: HashMap<Stage, HashSet<String>>,
    lock: Option<LockGuard>,
    crash_after: Option<usize>,
}

impl fmt::Debug for RecordStore {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("RecordStore").field("root", &self.root).field("writable", &self.is_writable()).finish()
    }
}

/// Record id, parent link and serialized line.
type PreparedLine = (String, Option<(Stage, String)>, String);

impl RecordStore {
    /// Opens (creating if needed) a store for writing. Only one writer may
    /// hold a store at a time.
    pub fn open(root: impl AsRef<Path>) -> Result<Self, StoreError> {
        let root = root.as_ref().to_path_buf();
        fs::create_dir_all(&root).map_err(io_err(&root))?;
        let lock_path = root.join(LOCK);
        // An OS lock rather than the file's existence, so a writer that
        // dies does not leave the store locked.
        let mut f = OpenOptions::new()
            .read(true)
            .write(true)
            .create(true)
            .truncate(false)
            .open(&lock_path)
            .map_err(io_err(&lock_path))?;
        match f.try_lock() {
            Ok(()) => {}
            Err(fs::TryLockError::WouldBlock) => return Err(StoreError::Locked(root)),
            Err(fs::TryLockError::Error(e)) => return Err(io_err(&lock_path)(e)),
        }
        f.set_len(0).map_err(io_err(&lock_path))?;
        let _ = writeln!(f, "{}", std::process::id());
        let lock = LockGuard(f);
        for stage in Stage::ALL {
            repair_torn_tail(&root.join(stage.file_name()))?;
        }
        let mut store = RecordStore { root, ids: HashMap::new(), lock: Some(lock), crash_after: None };
        store.load_ids()?;
        store.write_manifest()?;
        Ok(store)
    }

    /// Opens an existing store for reading. Never blocks on, or conflicts
    /// with, a writer.
    pub fn open_read(root: impl AsRef<Path>) -> Result<Self, StoreError> {
        let root = root.as_ref().to_path_buf();
        if !root.is_dir() {
            return Err(io_err(&root)(io::Error::new(io::ErrorKind::NotFound, "store directory not found")));
        }
        let mut store = RecordStore { root, ids: HashMap::new(), lock: None, crash_after: None };
        store.load_ids()?;
        Ok(store)
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn is_writable(&self) -> bool {
        self.lock.is_some()
    }

    /// Test hook: the next append writes `n` whole records, then half of
    /// the following one, then fails as if the process had died.
    #[doc(hidden)]
    pub fn inject_crash_after(&mut self, n: usize) {
        self.crash_after = Some(n);
    }

    pub fn count(&self, stage: Stage) -> usize {
        self.ids.get(&stage).map_or(0, HashSet::len)
    }

    pub fn contains(&self, stage: Stage, id: &str) -> bool {
        self.ids.get(&stage).is_some_and(|s| s.contains(id))
    }

    /// Re-reads stage ids from disk, picking up appends by another handle.
    pub fn refresh(&mut self) -> Result<(), StoreError> {
        self.load_ids()
    }

    fn stage_path(&self, stage: Stage) -> PathBuf {
        self.root.join(stage.file_name())
    }

    fn load_ids(&mut self) -> Result<(), StoreError> {
        self.ids.clear();
        for stage in Stage::ALL {
            let mut set = HashSet::new();
            for (line, value) in self.read_values_numbered(stage)? {
                let (id, _) =
                    describe(stage, &value).map_err(|message| StoreError::Corrupt { stage, line, message })?;
                set.insert(id);
            }
            self.ids.insert(stage, set);
        }
        Ok(())
    }

    fn read_values_numbered(&self, stage: Stage) -> Result<Vec<(usize, Value)>, StoreError> {
        let path = self.stage_path(stage);
        let bytes = match fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(e) => return Err(io_err(&path)(e)),
        };
        let complete = match bytes.iter().rposition(|&b| b == b'\n') {
            Some(pos) => &bytes[..=pos],
            None => &[][..],
        };
        let text = std::str::from_utf8(complete).map_err(|e| StoreError::Corrupt {
            stage,
            line: 0,
            message: e.to_string(),
        })?;
        let mut out = Vec::new();
        for (idx, line) in text.lines().enumerate() {
            if line.is_empty() {
                continue;
            }
            let value: Value = serde_json::from_str(line).map_err(|e| StoreError::Corrupt {
                stage,
                line: idx + 1,
                message: e.to_string(),
            })?;
            out.push((idx + 1, value));
        }
        Ok(out)
    }

    pub fn read_values(&self, stage: Stage) -> Result<Vec<Value>, StoreError> {
        Ok(self.read_values_numbered(stage)?.into_iter().map(|(_, v)| v).collect())
    }

    /// All records of a stage, in append order.
    pub fn read<R: StageRecord>(&self) -> Result<Vec<R>, StoreError> {
        self.read_values_numbered(R::STAGE)?
            .into_iter()
            .map(|(line, v)| {
                serde_json::from_value(v).map_err(|e| StoreError::Corrupt {
                    stage: R::STAGE,
                    line,
                    message: e.to_string(),
                })
            })
            .collect()
    }

    /// Appends typed records in order; returns how many were written.
    pub fn append<R: StageRecord>(&mut self, records: &[R]) -> Result<usize, StoreError> {
        let mut prepared = Vec::with_capacity(records.len());
        for r in records {
            r.check().map_err(|message| StoreError::Schema { stage: R::STAGE, message })?;
            let line =
                serde_json::to_string(r).map_err(|e| StoreError::Schema { stage: R::STAGE, message: e.to_string() })?;
            prepared.push((r.record_id(), r.parent(), line));
        }
        self.append_prepared(R::STAGE, prepared)
    }

    /// Appends untyped records after checking them against the stage schema.
    pub fn append_json(&mut self, stage: Stage, records: &[Value]) -> Result<usize, StoreError> {
        let mut prepared = Vec::with_capacity(records.len());
        for v in records {
            let (id, parent) = describe(stage, v).map_err(|message| StoreError::Schema { stage, message })?;
            prepared.push((id, parent, v.to_string()));
        }
        self.append_prepared(stage, prepared)
    }

    fn append_prepared(&mut self, stage: Stage, prepared: Vec<PreparedLine>) -> Result<usize, StoreError> {
        if !self.is_writable() {
            return Err(StoreError::ReadOnly);
        }
        let mut batch_ids = HashSet::new();
        for (id, parent, _) in &prepared {
            if self.contains(stage, id) || !batch_ids.insert(id.clone()) {
                return Err(StoreError::Duplicate { stage, id: id.clone() });
            }
            if let Some((parent_stage, parent_id)) = parent {
                let in_batch = *parent_stage == stage && batch_ids.contains(parent_id);
                if !in_batch && !self.contains(*parent_stage, parent_id) {
                    return Err(StoreError::Lineage {
                        stage,
                        id: id.clone(),
                        parent_stage: *parent_stage,
                        parent_id: parent_id.clone(),
                    });
                }
            }
        }

        let path = self.stage_path(stage);
        let mut file = OpenOptions::new().create(true).append(true).open(&path).map_err(io_err(&path))?;
        let crash_after = self.crash_after.take();
        let mut written = 0;
        for (id, _, line) in prepared {
            let mut bytes = line.into_bytes();
            bytes.push(b'\n');
            if crash_after == Some(written) {
                file.write_all(&bytes[..bytes.len() / 2]).map_err(io_err(&path))?;
                file.sync_data().map_err(io_err(&path))?;
                return Err(StoreError::SimulatedCrash { written });
            }
            file.write_all(&bytes).map_err(io_err(&path))?;
            file.sync_data().map_err(io_err(&path))?;
            self.ids.entry(stage).or_default().insert(id);
            written += 1;
        }
        self.write_manifest()?;
        Ok(written)
    }

    pub fn manifest(&self) -> Result<Manifest, StoreError> {
        let mut stages = BTreeMap::new();
        for stage in Stage::ALL {
            let path = self.stage_path(stage);
            let bytes = match fs::read(&path) {
                Ok(b) => b,
                Err(e) if e.kind() == io::ErrorKind::NotFound => Vec::new(),
                Err(e) => return Err(io_err(&path)(e)),
            };
            let complete = match bytes.iter().rposition(|&b| b == b'\n') {
                Some(pos) => &bytes[..=pos],
                None => &[][..],
            };
            stages.insert(stage, StageSummary { count: self.count(stage), sha256: sha256_hex(complete) });
        }
        Ok(Manifest { format: STORE_FORMAT.to_string(), stages })
    }

    fn write_manifest(&self) -> Result<(), StoreError> {
        let manifest = self.manifest()?;
        let path = self.root.join(MANIFEST);
        let tmp = self.root.join(format!("{MANIFEST}.tmp"));
        let body = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        {
            let mut f = File::create(&tmp).map_err(io_err(&tmp))?;
            f.write_all(body.as_bytes()).map_err(io_err(&tmp))?;
            f.write_all(b"\n").map_err(io_err(&tmp))?;
            f.sync_data().map_err(io_err(&tmp))?;
        }
        fs::rename(&tmp, &path).map_err(io_err(&path))
    }
}

pub(crate) fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn repair_torn_tail(path: &Path) -> Result<(), StoreError> {
    let bytes = match fs::read(path) {
        Ok(b) => b,
        Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(()),
        Err(e) => return Err(io_err(path)(e)),
    };
    let keep = bytes.iter().rposition(|&b| b == b'\n').map_or(0, |p| p + 1);
    if keep < bytes.len() {
        log::warn!("truncating torn record at end of {}", path.display());
        let f = OpenOptions::new().write(true).open(path).map_err(io_err(path))?;
        f.set_len(keep as u64).map_err(io_err(path))?;
        f.sync_data().map_err(io_err(path))?;
    }
    Ok(())
}

fn typed<R: StageRecord>(value: &Value) -> Result<(String, Option<(Stage, String)>), String> {
    let r: R = serde_json::from_value(value.clone()).map_err(|e| e.to_string())?;
    r.check()?;
    Ok((r.record_id(), r.parent()))
}

/// Checks a raw JSON value against a stage's record type.
fn describe(stage: Stage, value: &Value) -> Result<(String, Option<(Stage, String)>), String> {
    match stage {
        Stage::Raw => typed::<RawReport>(value),
        Stage::Decomposed => typed::<crate::decompose::HierarchicalRecord>(value),
        Stage::Verified => typed::<crate::decompose::VerifiedRecord>(value),
        Stage::Chained => typed::<crate::chain::ChainedRecord>(value),
        Stage::Judgments => typed::<crate::medihall::JudgmentRecord>(value),
        Stage::Decisions => typed::<crate::review::DecisionRecord>(value),
    }
}
