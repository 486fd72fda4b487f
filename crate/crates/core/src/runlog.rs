//! Append-only experiment record store (`runs.jsonl`).
//!
//! One JSON object per line. Appends hold an exclusive file lock; readers
//! never lock. A final line without a terminating newline, or one that
//! fails to parse, is treated as a torn write: readers skip it and the
//! next append moves it to `<store>.quarantine` before writing.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, SecondsFormat, Utc};
use serde::{Deserialize, Serialize};

use crate::corpus::compute_byte_hash;

pub const RUN_SCHEMA: &str = "rigorbench_run_v1";

#[derive(Debug, thiserror::Error)]
pub enum RunLogError {
    #[error("store i/o error on {path}: {source}")]
    StoreIo { path: PathBuf, source: std::io::Error },
    #[error("digest mismatch for {path}: recorded {recorded}, on disk {actual}")]
    DigestMismatch { path: String, recorded: String, actual: String },
    #[error("corrupt record at line {line}: {reason}")]
    Corrupt { line: usize, reason: String },
    #[error("bad timestamp {0:?}")]
    BadTimestamp(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArtifactDigest {
    /// e.g. `manifest`, `split`, `predictions`.
    pub role: String,
    pub path: String,
    pub sha256: String,
}

impl ArtifactDigest {
    /// Hashes the file now.
    pub fn of_file(role: &str, path: &Path) -> Result<Self, RunLogError> {
        let bytes = std::fs::read(path).map_err(|source| RunLogError::StoreIo { path: path.to_path_buf(), source })?;
        Ok(Self { role: role.into(), path: path.to_string_lossy().into_owned(), sha256: compute_byte_hash(&bytes) })
    }
}

/// Record contents supplied by the caller; id and timestamp are assigned
/// at append time.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RunDraft {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset: Option<String>,
    pub config: serde_json::Value,
    pub artifacts: Vec<ArtifactDigest>,
    pub metrics: BTreeMap<String, f64>,
    pub wall_clock_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub schema: String,
    pub run_id: String,
    /// UTC, RFC 3339.
    pub timestamp: String,
    #[serde(flatten)]
    pub body: RunDraft,
}

impl RunRecord {
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("run record serializes")
    }

    pub fn from_json_line(line: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(line)
    }

    pub fn time(&self) -> Result<DateTime<Utc>, RunLogError> {
        DateTime::parse_from_rfc3339(&self.timestamp)
            .map(|t| t.with_timezone(&Utc))
            .map_err(|_| RunLogError::BadTimestamp(self.timestamp.clone()))
    }

    fn millis(&self) -> Option<u64> {
        self.run_id.split('-').next()?.parse().ok()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RunFilter {
    pub dataset: Option<String>,
    pub since: Option<DateTime<Utc>>,
    pub until: Option<DateTime<Utc>>,
}

impl RunFilter {
    pub fn matches(&self, r: &RunRecord) -> Result<bool, RunLogError> {
        if let Some(d) = &self.dataset {
            if r.body.dataset.as_deref() != Some(d.as_str()) {
                return Ok(false);
            }
        }
        if self.since.is_none() && self.until.is_none() {
            return Ok(true);
        }
        let t = r.time()?;
        Ok(self.since.is_none_or(|s| t >= s) && self.until.is_none_or(|u| t <= u))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StoreContents {
    pub records: Vec<RunRecord>,
    /// Bytes of an incomplete final line, if any.
    pub torn_tail: Option<String>,
}

#[derive(Debug, Clone)]
pub struct RunStore {
    path: PathBuf,
}

fn parse_contents(text: &str) -> Result<StoreContents, RunLogError> {
    let mut records = Vec::new();
    let mut torn_tail = None;
    let mut rest = text;
    let mut line_no = 0;
    while !rest.is_empty() {
        line_no += 1;
        let (line, terminated, next) = match rest.find('\n') {
            Some(i) => (&rest[..i], true, &rest[i + 1..]),
            None => (rest, false, ""),
        };
        rest = next;
        if line.trim().is_empty() {
            continue;
        }
        match RunRecord::from_json_line(line) {
            Ok(r) if terminated => records.push(r),
            // A parseable record without its newline is still a torn write.
            Ok(_) => torn_tail = Some(line.to_string()),
            Err(_) if rest.is_empty() => torn_tail = Some(format!("{line}{}", if terminated { "\n" } else { "" })),
            Err(e) => return Err(RunLogError::Corrupt { line: line_no, reason: e.to_string() }),
        }
    }
    Ok(StoreContents { records, torn_tail })
}

impl RunStore {
    pub fn new(path: impl Into<PathBuf>) -> Self {
        Self { path: path.into() }
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn quarantine_path(&self) -> PathBuf {
        let mut p = self.path.clone().into_os_string();
        p.push(".quarantine");
        PathBuf::from(p)
    }

    fn io(&self, source: std::io::Error) -> RunLogError {
        RunLogError::StoreIo { path: self.path.clone(), source }
    }

    pub fn read(&self) -> Result<StoreContents, RunLogError> {
        match std::fs::read_to_string(&self.path) {
            Ok(text) => parse_contents(&text),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(StoreContents { records: vec![], torn_tail: None }),
            Err(e) => Err(self.io(e)),
        }
    }

    /// Checks every artifact digest against the file on disk, assigns a
    /// run id and timestamp, and appends under an exclusive lock.
    pub fn append(&self, draft: RunDraft) -> Result<RunRecord, RunLogError> {
        for a in &draft.artifacts {
            let actual = ArtifactDigest::of_file(&a.role, Path::new(&a.path))?.sha256;
            if actual != a.sha256 {
                return Err(RunLogError::DigestMismatch { path: a.path.clone(), recorded: a.sha256.clone(), actual });
            }
        }
        if let Some(dir) = self.path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| self.io(e))?;
        }
        let mut file = OpenOptions::new().read(true).append(true).create(true).open(&self.path).map_err(|e| self.io(e))?;
        file.lock().map_err(|e| self.io(e))?;
        let result = self.append_locked(&mut file, draft);
        let _ = file.unlock();
        result
    }

    fn append_locked(&self, file: &mut File, draft: RunDraft) -> Result<RunRecord, RunLogError> {
        let mut text = String::new();
        file.seek(SeekFrom::Start(0)).map_err(|e| self.io(e))?;
        file.read_to_string(&mut text).map_err(|e| self.io(e))?;
        let contents = parse_contents(&text)?;
        if let Some(tail) = &contents.torn_tail {
            self.quarantine(file, &text, tail)?;
        }
        let now = Utc::now();
        let last = contents.records.last().and_then(RunRecord::millis).unwrap_or(0);
        let millis = (now.timestamp_millis().max(0) as u64).max(last + 1);
        let record = RunRecord {
            schema: RUN_SCHEMA.into(),
            run_id: format!("{millis:013}-{:08x}", rand::random::<u32>()),
            timestamp: now.to_rfc3339_opts(SecondsFormat::Micros, true),
            body: draft,
        };
        let mut line = record.to_json_line();
        line.push('\n');
        file.write_all(line.as_bytes()).map_err(|e| self.io(e))?;
        file.sync_data().map_err(|e| self.io(e))?;
        Ok(record)
    }

    fn quarantine(&self, file: &mut File, text: &str, tail: &str) -> Result<(), RunLogError> {
        let q = self.quarantine_path();
        let mut qf = OpenOptions::new().append(true).create(true).open(&q).map_err(|source| RunLogError::StoreIo { path: q.clone(), source })?;
        let mut entry = tail.trim_end_matches('\n').to_string();
        entry.push('\n');
        qf.write_all(entry.as_bytes()).map_err(|source| RunLogError::StoreIo { path: q.clone(), source })?;
        qf.sync_data().map_err(|source| RunLogError::StoreIo { path: q, source })?;
        let keep = text.len() - tail.len();
        file.set_len(keep as u64).map_err(|e| self.io(e))?;
        Ok(())
    }

    /// Records in append (chronological) order.
    pub fn query(&self, filter: &RunFilter) -> Result<Vec<RunRecord>, RunLogError> {
        let mut out = Vec::new();
        for r in self.read()?.records {
            if filter.matches(&r)? {
                out.push(r);
            }
        }
        Ok(out)
    }

    pub fn get(&self, run_id: &str) -> Result<Option<RunRecord>, RunLogError> {
        Ok(self.read()?.records.into_iter().find(|r| r.run_id == run_id))
    }
}

pub fn append_run(store: &RunStore, draft: RunDraft) -> Result<String, RunLogError> {
    store.append(draft).map(|r| r.run_id)
}

pub fn query_runs(store: &RunStore, filter: &RunFilter) -> Result<Vec<RunRecord>, RunLogError> {
    store.query(filter)
}
