//! Corpus ingestion, hashing, duplicate grouping and exclusion ledgers.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::hamming::{HammingIndex, ScanStrategy};
use crate::raster::{self, hamming, RasterError};

pub const MANIFEST_SCHEMA: &str = "rigorbench_manifest_v1";
pub const DEFAULT_NEAR_THRESHOLD: u32 = 8;
pub const MANIFEST_HEADER: &str = "id,path,label,byte_hash,phash,width,height";

const IMAGE_EXTENSIONS: &[&str] = &["png", "jpg", "jpeg"];

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error(transparent)]
    Raster(#[from] RasterError),
    #[error("i/o error on {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("manifest format error: {0}")]
    Format(String),
    #[error("duplicate id {0:?} in manifest")]
    DuplicateId(String),
    #[error("record {0:?} has an empty label")]
    EmptyLabel(String),
    #[error("exclusion ledger references unknown id {0:?}")]
    UnknownId(String),
    #[error("exclusion ledger lists id {0:?} more than once")]
    RepeatedLedgerId(String),
    #[error("no label found for {0:?}")]
    MissingLabel(String),
    #[error("near threshold {0} outside 0..=64")]
    BadThreshold(u32),
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> CorpusError + '_ {
    move |source| CorpusError::Io { path: path.to_path_buf(), source }
}

/// SHA-256 of raw bytes, lowercase hex.
pub fn compute_byte_hash(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn compute_phash(image: &image::RgbImage) -> Result<u64, RasterError> {
    raster::dhash(image)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub id: String,
    pub path: String,
    pub label: String,
    pub byte_hash: String,
    pub phash: u64,
    pub width: u32,
    pub height: u32,
}

impl ImageRecord {
    /// Hash an encoded image held in memory.
    pub fn from_bytes(id: &str, path: &str, label: &str, bytes: &[u8]) -> Result<Self, RasterError> {
        let img = raster::decode_bytes(bytes, path)?;
        Ok(ImageRecord {
            id: id.to_string(),
            path: path.to_string(),
            label: label.to_string(),
            byte_hash: compute_byte_hash(bytes),
            phash: raster::dhash(&img)?,
            width: img.width(),
            height: img.height(),
        })
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestRow {
    id: String,
    path: String,
    label: String,
    byte_hash: String,
    phash: String,
    width: u32,
    height: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExclusionReason {
    Duplicate,
    Noise,
    Quality,
    Manual,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExclusionEntry {
    pub id: String,
    pub reason: ExclusionReason,
    #[serde(default)]
    pub note: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExclusionLedger {
    pub schema: String,
    pub entries: Vec<ExclusionEntry>,
}

impl Default for ExclusionLedger {
    fn default() -> Self {
        Self { schema: MANIFEST_SCHEMA.to_string(), entries: Vec::new() }
    }
}

impl ExclusionLedger {
    pub fn from_json(text: &str) -> Result<Self, CorpusError> {
        let ledger: ExclusionLedger = serde_json::from_str(text).map_err(|e| CorpusError::Format(e.to_string()))?;
        if ledger.schema != MANIFEST_SCHEMA {
            return Err(CorpusError::Format(format!("unexpected ledger schema {:?}", ledger.schema)));
        }
        Ok(ledger)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("ledger serializes")
    }

    /// Proposes one `duplicate` exclusion per group member except the
    /// lexicographically smallest id, which is kept.
    pub fn from_duplicate_groups(groups: &[DuplicateGroup]) -> Self {
        let mut seen = BTreeSet::new();
        let mut entries = Vec::new();
        for g in groups {
            for id in g.member_ids.iter().skip(1) {
                if seen.insert(id.clone()) {
                    let kind = match g.kind {
                        DuplicateKind::Exact => "exact",
                        DuplicateKind::Near => "near",
                    };
                    entries.push(ExclusionEntry {
                        id: id.clone(),
                        reason: ExclusionReason::Duplicate,
                        note: format!("{kind} duplicate of {}", g.member_ids[0]),
                    });
                }
            }
        }
        entries.sort_by(|a, b| a.id.cmp(&b.id));
        Self { schema: MANIFEST_SCHEMA.to_string(), entries }
    }
}

/// Stamp left on a manifest once the exclusion ledger has been applied.
/// `split` refuses manifests without one.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CleaningReport {
    pub schema: String,
    pub source_records: usize,
    pub retained_records: usize,
    pub excluded_by_reason: BTreeMap<ExclusionReason, usize>,
    pub excluded_ids: Vec<String>,
    /// SHA-256 of the cleaned manifest's CSV serialization.
    pub manifest_digest: String,
}

impl CleaningReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, CorpusError> {
        let r: CleaningReport = serde_json::from_str(text).map_err(|e| CorpusError::Format(e.to_string()))?;
        if r.schema != MANIFEST_SCHEMA {
            return Err(CorpusError::Format(format!("unexpected cleaning report schema {:?}", r.schema)));
        }
        Ok(r)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct DatasetManifest {
    pub records: Vec<ImageRecord>,
    pub cleaning: Option<CleaningReport>,
}

impl DatasetManifest {
    /// Builds an unstamped manifest, sorting records by id and checking
    /// id uniqueness and non-empty labels.
    pub fn new(mut records: Vec<ImageRecord>) -> Result<Self, CorpusError> {
        records.sort_by(|a, b| a.id.cmp(&b.id));
        for w in records.windows(2) {
            if w[0].id == w[1].id {
                return Err(CorpusError::DuplicateId(w[0].id.clone()));
            }
        }
        if let Some(r) = records.iter().find(|r| r.label.is_empty()) {
            return Err(CorpusError::EmptyLabel(r.id.clone()));
        }
        Ok(Self { records, cleaning: None })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&ImageRecord> {
        self.records.binary_search_by(|r| r.id.as_str().cmp(id)).ok().map(|i| &self.records[i])
    }

    /// Labels in order of first appearance.
    pub fn labels(&self) -> Vec<String> {
        let mut seen = BTreeSet::new();
        let mut out = Vec::new();
        for r in &self.records {
            if seen.insert(r.label.as_str()) {
                out.push(r.label.clone());
            }
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
        for r in &self.records {
            w.serialize(ManifestRow {
                id: r.id.clone(),
                path: r.path.clone(),
                label: r.label.clone(),
                byte_hash: r.byte_hash.clone(),
                phash: raster::phash_hex(r.phash),
                width: r.width,
                height: r.height,
            })
            .expect("in-memory csv write");
        }
        let bytes = w.into_inner().expect("in-memory csv flush");
        let mut text = String::from_utf8(bytes).expect("utf-8 csv");
        if self.records.is_empty() {
            text = format!("{MANIFEST_HEADER}\n");
        }
        text
    }

    /// Parses the CSV body only; the cleaning stamp lives in a sidecar.
    pub fn from_csv(text: &str) -> Result<Self, CorpusError> {
        let header = text.lines().next().unwrap_or_default();
        if header != MANIFEST_HEADER {
            return Err(CorpusError::Format(format!("expected header {MANIFEST_HEADER:?}, got {header:?}")));
        }
        let mut rdr = csv::Reader::from_reader(text.as_bytes());
        let mut records = Vec::new();
        for (line, row) in rdr.deserialize::<ManifestRow>().enumerate() {
            let row = row.map_err(|e| CorpusError::Format(format!("row {}: {e}", line + 2)))?;
            let phash = raster::parse_phash_hex(&row.phash)
                .ok_or_else(|| CorpusError::Format(format!("row {}: bad phash {:?}", line + 2, row.phash)))?;
            records.push(ImageRecord {
                id: row.id,
                path: row.path,
                label: row.label,
                byte_hash: row.byte_hash,
                phash,
                width: row.width,
                height: row.height,
            });
        }
        DatasetManifest::new(records)
    }

    pub fn digest(&self) -> String {
        compute_byte_hash(self.to_csv().as_bytes())
    }

    /// True when the manifest carries a cleaning stamp matching its contents.
    pub fn is_stamped(&self) -> bool {
        self.cleaning.as_ref().is_some_and(|c| c.manifest_digest == self.digest())
    }

    pub fn stamp_path(manifest_path: &Path) -> PathBuf {
        let mut s = manifest_path.as_os_str().to_owned();
        s.push(".cleaning.json");
        PathBuf::from(s)
    }

    /// Writes the CSV and, when stamped, the `<path>.cleaning.json` sidecar.
    pub fn write(&self, path: &Path) -> Result<(), CorpusError> {
        crate::io_util::write_atomic(path, self.to_csv().as_bytes()).map_err(io_err(path))?;
        if let Some(c) = &self.cleaning {
            let sp = Self::stamp_path(path);
            crate::io_util::write_atomic(&sp, c.to_json().as_bytes()).map_err(io_err(&sp))?;
        }
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self, CorpusError> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        let mut m = Self::from_csv(&text)?;
        let sp = Self::stamp_path(path);
        if sp.exists() {
            let stamp = fs::read_to_string(&sp).map_err(io_err(&sp))?;
            m.cleaning = Some(CleaningReport::from_json(&stamp)?);
        }
        Ok(m)
    }
}

#[derive(Debug, Clone)]
pub enum LabelSource {
    /// Label = name of the file's parent directory.
    Subdirectory,
    /// Explicit id -> label table.
    Table(HashMap<String, String>),
}

impl LabelSource {
    /// Parses `subdir` or `file:<path>` (CSV with `id,label` header).
    pub fn parse(mode: &str) -> Result<Self, CorpusError> {
        if mode == "subdir" {
            return Ok(LabelSource::Subdirectory);
        }
        let Some(path) = mode.strip_prefix("file:") else {
            return Err(CorpusError::Format(format!("unknown label mode {mode:?} (expected subdir or file:<path>)")));
        };
        let path = Path::new(path);
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        let mut rdr = csv::Reader::from_reader(text.as_bytes());
        let mut table = HashMap::new();
        for row in rdr.records() {
            let row = row.map_err(|e| CorpusError::Format(e.to_string()))?;
            if row.len() < 2 {
                return Err(CorpusError::Format("label table rows need id,label".into()));
            }
            table.insert(row[0].to_string(), row[1].to_string());
        }
        Ok(LabelSource::Table(table))
    }

    fn label_for(&self, id: &str) -> Option<String> {
        match self {
            LabelSource::Subdirectory => {
                let mut parts: Vec<&str> = id.split('/').collect();
                parts.pop();
                parts.pop().map(str::to_string)
            }
            LabelSource::Table(t) => t.get(id).cloned(),
        }
    }
}

fn collect_images(root: &Path, dir: &Path, out: &mut Vec<PathBuf>) -> Result<(), CorpusError> {
    let mut entries: Vec<_> = fs::read_dir(dir)
        .map_err(io_err(dir))?
        .collect::<Result<_, _>>()
        .map_err(io_err(dir))?;
    entries.sort_by_key(|e| e.file_name());
    for e in entries {
        let p = e.path();
        if p.is_dir() {
            collect_images(root, &p, out)?;
        } else if p
            .extension()
            .and_then(|x| x.to_str())
            .is_some_and(|x| IMAGE_EXTENSIONS.contains(&x.to_ascii_lowercase().as_str()))
        {
            out.push(p);
        }
    }
    Ok(())
}

/// Walks `root`, hashing every PNG/JPEG in parallel. Ids are paths relative
/// to `root` with `/` separators.
pub fn scan_corpus(root: &Path, labels: &LabelSource) -> Result<DatasetManifest, CorpusError> {
    let mut files = Vec::new();
    collect_images(root, root, &mut files)?;
    let records: Vec<ImageRecord> = files
        .par_iter()
        .map(|p| {
            let rel = p.strip_prefix(root).unwrap_or(p);
            let id = rel.components().map(|c| c.as_os_str().to_string_lossy()).collect::<Vec<_>>().join("/");
            let label = labels.label_for(&id).ok_or_else(|| CorpusError::MissingLabel(id.clone()))?;
            let bytes = fs::read(p).map_err(io_err(p))?;
            Ok(ImageRecord::from_bytes(&id, &p.display().to_string(), &label, &bytes)?)
        })
        .collect::<Result<_, CorpusError>>()?;
    DatasetManifest::new(records)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DuplicateKind {
    Exact,
    Near,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DuplicateGroup {
    pub kind: DuplicateKind,
    /// Sorted ascending; at least two members.
    pub member_ids: Vec<String>,
    /// Largest pairwise phash distance inside the group (0 for exact groups).
    /// Near groups are connected components, so a chain may exceed the
    /// threshold end to end.
    pub max_hamming: u32,
}

struct DisjointSet {
    parent: Vec<usize>,
}

impl DisjointSet {
    fn new(n: usize) -> Self {
        Self { parent: (0..n).collect() }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.parent[hi] = lo;
        }
    }
}

/// Exact groups share a byte hash; near groups are connected components of
/// the graph whose edges are non-exact pairs within `near_threshold`.
/// Output is sorted (exact groups first, then by first member id).
pub fn find_duplicates(
    records: &[ImageRecord],
    near_threshold: u32,
    strategy: ScanStrategy,
) -> Result<Vec<DuplicateGroup>, CorpusError> {
    if near_threshold > 64 {
        return Err(CorpusError::BadThreshold(near_threshold));
    }
    let mut sorted: Vec<&ImageRecord> = records.iter().collect();
    sorted.sort_by(|a, b| a.id.cmp(&b.id));

    let mut groups = Vec::new();
    let mut by_bytes: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for r in &sorted {
        by_bytes.entry(r.byte_hash.as_str()).or_default().push(r.id.as_str());
    }
    for ids in by_bytes.values().filter(|ids| ids.len() >= 2) {
        groups.push(DuplicateGroup {
            kind: DuplicateKind::Exact,
            member_ids: ids.iter().map(|s| s.to_string()).collect(),
            max_hamming: 0,
        });
    }

    let hashes: Vec<u64> = sorted.iter().map(|r| r.phash).collect();
    let index = HammingIndex::build(&hashes, strategy);
    let mut dsu = DisjointSet::new(sorted.len());
    let mut has_edge = vec![false; sorted.len()];
    for (i, r) in sorted.iter().enumerate() {
        for (j, _) in index.within(r.phash, near_threshold) {
            if j > i && sorted[j].byte_hash != r.byte_hash {
                dsu.union(i, j);
                has_edge[i] = true;
                has_edge[j] = true;
            }
        }
    }
    let mut comps: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for i in (0..sorted.len()).filter(|&i| has_edge[i]) {
        let root = dsu.find(i);
        comps.entry(root).or_default().push(i);
    }
    let mut near: Vec<DuplicateGroup> = comps
        .into_values()
        .map(|members| {
            let mut max_h = 0;
            for (a, &i) in members.iter().enumerate() {
                for &j in &members[a + 1..] {
                    max_h = max_h.max(hamming(hashes[i], hashes[j]));
                }
            }
            DuplicateGroup {
                kind: DuplicateKind::Near,
                member_ids: members.iter().map(|&i| sorted[i].id.clone()).collect(),
                max_hamming: max_h,
            }
        })
        .collect();
    near.sort_by(|a, b| a.member_ids.cmp(&b.member_ids));
    groups.extend(near);
    Ok(groups)
}

/// Removes ledger ids and stamps the result with a [`CleaningReport`].
///
/// Ids already recorded as excluded in the input's own stamp are accepted
/// and skipped, which makes the operation idempotent.
pub fn apply_exclusions(manifest: &DatasetManifest, ledger: &ExclusionLedger) -> Result<DatasetManifest, CorpusError> {
    let previously: BTreeSet<&str> = manifest
        .cleaning
        .as_ref()
        .map(|c| c.excluded_ids.iter().map(String::as_str).collect())
        .unwrap_or_default();

    let mut seen = BTreeSet::new();
    let mut drop: BTreeSet<&str> = BTreeSet::new();
    let mut new_counts: BTreeMap<ExclusionReason, usize> = BTreeMap::new();
    for e in &ledger.entries {
        if !seen.insert(e.id.as_str()) {
            return Err(CorpusError::RepeatedLedgerId(e.id.clone()));
        }
        if manifest.get(&e.id).is_some() {
            drop.insert(e.id.as_str());
            *new_counts.entry(e.reason).or_default() += 1;
        } else if !previously.contains(e.id.as_str()) {
            return Err(CorpusError::UnknownId(e.id.clone()));
        }
    }

    let records: Vec<ImageRecord> =
        manifest.records.iter().filter(|r| !drop.contains(r.id.as_str())).cloned().collect();
    let (source_records, mut by_reason, mut excluded_ids) = match &manifest.cleaning {
        Some(c) => (c.source_records, c.excluded_by_reason.clone(), c.excluded_ids.clone()),
        None => (manifest.len(), BTreeMap::new(), Vec::new()),
    };
    for (reason, n) in new_counts {
        *by_reason.entry(reason).or_default() += n;
    }
    excluded_ids.extend(drop.iter().map(|s| s.to_string()));
    excluded_ids.sort();

    let mut out = DatasetManifest { records, cleaning: None };
    let digest = out.digest();
    out.cleaning = Some(CleaningReport {
        schema: MANIFEST_SCHEMA.to_string(),
        source_records,
        retained_records: out.len(),
        excluded_by_reason: by_reason,
        excluded_ids,
        manifest_digest: digest,
    });
    Ok(out)
}
