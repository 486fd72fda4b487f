//! Stratified holdout splits and k-fold plans.
//!
//! Holdout first, folds second: the test partition is carved out of the
//! cleaned manifest, and k-fold plans are drawn from the remaining
//! train+val pool only.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use rand::seq::SliceRandom;
use serde::de::{MapAccess, Visitor};
use serde::ser::SerializeMap;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::corpus::DatasetManifest;
use crate::seed;

pub const SPLIT_SCHEMA: &str = "rigorbench_split_v1";
pub const KFOLD_SCHEMA: &str = "rigorbench_kfold_v1";

const HOLDOUT_STREAM: &str = "holdout";
const KFOLD_STREAM: &str = "kfold";

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum SplitError {
    #[error("manifest has no cleaning stamp (or the stamp does not match its contents); run the audit first")]
    UnstampedManifest,
    #[error("class {0:?} has no usable records")]
    EmptyClass(String),
    #[error("manifest is empty")]
    EmptyManifest,
    #[error("invalid proportions: {0}")]
    BadProportions(String),
    #[error("k must be at least 2 (got {0})")]
    BadK(usize),
    #[error("split references id {0:?} absent from the manifest")]
    ForeignId(String),
    #[error("split format error: {0}")]
    Format(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Partition {
    Train,
    Val,
    Test,
}

impl Partition {
    pub const ALL: [Partition; 3] = [Partition::Train, Partition::Val, Partition::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Partition::Train => "train",
            Partition::Val => "val",
            Partition::Test => "test",
        }
    }

    pub fn is_eval(self) -> bool {
        self != Partition::Train
    }
}

impl fmt::Display for Partition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Proportions {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Proportions {
    fn as_array(&self) -> [f64; 3] {
        [self.train, self.val, self.test]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub proportions: Proportions,
    pub seed: u64,
}

impl SplitSpec {
    pub fn new(train: f64, val: f64, test: f64, seed: u64) -> Result<Self, SplitError> {
        let p = Proportions { train, val, test };
        for (name, v) in [("train", train), ("val", val), ("test", test)] {
            if !v.is_finite() || v < 0.0 {
                return Err(SplitError::BadProportions(format!("{name} = {v}")));
            }
        }
        let sum = train + val + test;
        if (sum - 1.0).abs() > 1e-9 {
            return Err(SplitError::BadProportions(format!("sum = {sum}, expected 1")));
        }
        Ok(Self { proportions: p, seed })
    }
}

/// Integer apportionment of `n` items by the largest-remainder method.
/// Ties on the remainder go to the earlier position.
pub fn largest_remainder(n: usize, proportions: &[f64]) -> Vec<usize> {
    let ideal: Vec<f64> = proportions.iter().map(|p| n as f64 * p).collect();
    // Guard against 6.9999999 style products.
    let mut counts: Vec<usize> = ideal.iter().map(|x| (x + 1e-9).floor().max(0.0) as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..proportions.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = ideal[a] - counts[a] as f64;
        let rb = ideal[b] - counts[b] as f64;
        rb.partial_cmp(&ra).unwrap_or(std::cmp::Ordering::Equal).then(a.cmp(&b))
    });
    for &i in order.iter().cycle().take(n.saturating_sub(assigned)) {
        counts[i] += 1;
    }
    counts
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCounts {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

impl ClassCounts {
    pub fn get(&self, p: Partition) -> usize {
        match p {
            Partition::Train => self.train,
            Partition::Val => self.val,
            Partition::Test => self.test,
        }
    }

    fn bump(&mut self, p: Partition) {
        match p {
            Partition::Train => self.train += 1,
            Partition::Val => self.val += 1,
            Partition::Test => self.test += 1,
        }
    }

    pub fn total(&self) -> usize {
        self.train + self.val + self.test
    }
}

/// Assignment entries kept as a sorted list so that malformed inputs (an id
/// listed twice) stay representable for [`verify_split`].
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Assignment(pub Vec<(String, Partition)>);

impl Serialize for Assignment {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let mut m = s.serialize_map(Some(self.0.len()))?;
        for (id, p) in &self.0 {
            m.serialize_entry(id, p)?;
        }
        m.end()
    }
}

impl<'de> Deserialize<'de> for Assignment {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        struct V;
        impl<'de> Visitor<'de> for V {
            type Value = Assignment;
            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("a map from id to partition")
            }
            fn visit_map<A: MapAccess<'de>>(self, mut map: A) -> Result<Assignment, A::Error> {
                let mut out = Vec::new();
                while let Some((k, v)) = map.next_entry::<String, Partition>()? {
                    out.push((k, v));
                }
                Ok(Assignment(out))
            }
        }
        d.deserialize_map(V)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub schema: String,
    pub seed: u64,
    pub proportions: Proportions,
    pub assignment: Assignment,
    pub class_table: BTreeMap<String, ClassCounts>,
    /// Digest of the cleaned dataset manifest this split was drawn from.
    pub source_manifest_digest: String,
}

impl SplitManifest {
    pub fn spec(&self) -> SplitSpec {
        SplitSpec { proportions: self.proportions, seed: self.seed }
    }

    pub fn ids_in(&self, p: Partition) -> Vec<&str> {
        self.assignment.0.iter().filter(|(_, q)| *q == p).map(|(id, _)| id.as_str()).collect()
    }

    pub fn partition_of(&self, id: &str) -> Option<Partition> {
        self.assignment
            .0
            .binary_search_by(|(k, _)| k.as_str().cmp(id))
            .ok()
            .map(|i| self.assignment.0[i].1)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("split serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, SplitError> {
        let s: SplitManifest = serde_json::from_str(text).map_err(|e| SplitError::Format(e.to_string()))?;
        if s.schema != SPLIT_SCHEMA {
            return Err(SplitError::Format(format!("unexpected schema {:?}", s.schema)));
        }
        Ok(s)
    }
}

fn group_by_label<'a>(items: impl Iterator<Item = (&'a str, &'a str)>) -> BTreeMap<&'a str, Vec<&'a str>> {
    let mut by: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for (id, label) in items {
        by.entry(label).or_default().push(id);
    }
    for ids in by.values_mut() {
        ids.sort_unstable();
    }
    by
}

fn class_shuffle<'a>(ids: &mut [&'a str], seed: u64, stream: &str, label: &str) {
    let mut rng = seed::rng(seed::derive(seed::derive(seed, stream), label));
    ids.shuffle(&mut rng);
}

/// Stratified train/val/test split of a cleaned manifest.
///
/// Per class, counts come from [`largest_remainder`] in (train, val, test)
/// order; members are assigned from a shuffle seeded by `(seed, label)`.
pub fn stratified_holdout(manifest: &DatasetManifest, spec: &SplitSpec) -> Result<SplitManifest, SplitError> {
    if !manifest.is_stamped() {
        return Err(SplitError::UnstampedManifest);
    }
    if manifest.is_empty() {
        return Err(SplitError::EmptyManifest);
    }
    let by_label = group_by_label(manifest.records.iter().map(|r| (r.id.as_str(), r.label.as_str())));
    let props = spec.proportions.as_array();
    let mut assignment = Vec::with_capacity(manifest.len());
    let mut class_table = BTreeMap::new();
    for (label, ids) in by_label {
        if label.trim().is_empty() {
            return Err(SplitError::EmptyClass(label.to_string()));
        }
        let mut ids = ids;
        class_shuffle(&mut ids, spec.seed, HOLDOUT_STREAM, label);
        let counts = largest_remainder(ids.len(), &props);
        let mut table = ClassCounts::default();
        let mut it = ids.into_iter();
        for (p, n) in Partition::ALL.into_iter().zip(counts) {
            for id in it.by_ref().take(n) {
                assignment.push((id.to_string(), p));
                table.bump(p);
            }
        }
        class_table.insert(label.to_string(), table);
    }
    assignment.sort();
    Ok(SplitManifest {
        schema: SPLIT_SCHEMA.to_string(),
        seed: spec.seed,
        proportions: spec.proportions,
        assignment: Assignment(assignment),
        class_table,
        source_manifest_digest: manifest.digest(),
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub schema: String,
    pub k: usize,
    pub seed: u64,
    pub assignment: BTreeMap<String, usize>,
}

impl FoldPlan {
    pub fn validation_ids(&self, fold: usize) -> Vec<&str> {
        self.assignment.iter().filter(|(_, f)| **f == fold).map(|(id, _)| id.as_str()).collect()
    }

    pub fn training_ids(&self, fold: usize) -> Vec<&str> {
        self.assignment.iter().filter(|(_, f)| **f != fold).map(|(id, _)| id.as_str()).collect()
    }

    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &f in self.assignment.values() {
            sizes[f] += 1;
        }
        sizes
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("fold plan serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, SplitError> {
        let p: FoldPlan = serde_json::from_str(text).map_err(|e| SplitError::Format(e.to_string()))?;
        if p.schema != KFOLD_SCHEMA {
            return Err(SplitError::Format(format!("unexpected schema {:?}", p.schema)));
        }
        if p.k < 2 || p.assignment.values().any(|&f| f >= p.k) {
            return Err(SplitError::Format("fold index out of range".into()));
        }
        Ok(p)
    }
}

/// Stratified k-fold plan over `(id, label)` pairs.
///
/// Classes are visited in label order; within a class, members are dealt
/// round-robin from a seeded shuffle, continuing from the fold where the
/// previous class stopped so total fold sizes also differ by at most one.
pub fn stratified_kfold<'a>(
    pool: impl IntoIterator<Item = (&'a str, &'a str)>,
    k: usize,
    seed: u64,
) -> Result<FoldPlan, SplitError> {
    if k < 2 {
        return Err(SplitError::BadK(k));
    }
    let by_label = group_by_label(pool.into_iter());
    let mut assignment = BTreeMap::new();
    let mut next = 0usize;
    for (label, mut ids) in by_label {
        class_shuffle(&mut ids, seed, KFOLD_STREAM, label);
        for id in ids {
            assignment.insert(id.to_string(), next);
            next = (next + 1) % k;
        }
    }
    Ok(FoldPlan { schema: KFOLD_SCHEMA.to_string(), k, seed, assignment })
}

/// k-fold plan over the train+val pool of a holdout split.
pub fn kfold_from_split(
    manifest: &DatasetManifest,
    split: &SplitManifest,
    k: usize,
    seed: u64,
) -> Result<FoldPlan, SplitError> {
    let mut pool = Vec::new();
    for (id, p) in &split.assignment.0 {
        if *p == Partition::Test {
            continue;
        }
        let r = manifest.get(id).ok_or_else(|| SplitError::ForeignId(id.clone()))?;
        pool.push((r.id.as_str(), r.label.as_str()));
    }
    stratified_kfold(pool, k, seed)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub disjoint: bool,
    pub overlapping_ids: Vec<String>,
    pub exhaustive: bool,
    pub missing_ids: Vec<String>,
    /// Largest |actual - n_c * p_s| over classes and partitions.
    pub max_deviation: f64,
    pub per_class_deviation: BTreeMap<String, f64>,
    pub tolerance: f64,
    pub passed: bool,
}

pub const DEVIATION_TOLERANCE: f64 = 1.0;

pub fn verify_split(manifest: &DatasetManifest, split: &SplitManifest) -> Result<VerificationReport, SplitError> {
    let mut seen: BTreeMap<&str, BTreeSet<Partition>> = BTreeMap::new();
    for (id, p) in &split.assignment.0 {
        if manifest.get(id).is_none() {
            return Err(SplitError::ForeignId(id.clone()));
        }
        seen.entry(id.as_str()).or_default().insert(*p);
    }
    let overlapping_ids: Vec<String> =
        seen.iter().filter(|(_, ps)| ps.len() > 1).map(|(id, _)| id.to_string()).collect();
    let missing_ids: Vec<String> =
        manifest.records.iter().filter(|r| !seen.contains_key(r.id.as_str())).map(|r| r.id.clone()).collect();

    let mut actual: BTreeMap<&str, ClassCounts> = BTreeMap::new();
    let mut class_sizes: BTreeMap<&str, usize> = BTreeMap::new();
    for r in &manifest.records {
        *class_sizes.entry(r.label.as_str()).or_default() += 1;
    }
    for (id, p) in &split.assignment.0 {
        if let Some(r) = manifest.get(id) {
            actual.entry(r.label.as_str()).or_default().bump(*p);
        }
    }
    let props = split.proportions.as_array();
    let mut per_class_deviation = BTreeMap::new();
    let mut max_deviation: f64 = 0.0;
    for (label, n) in class_sizes {
        let counts = actual.get(label).copied().unwrap_or_default();
        let dev = Partition::ALL
            .iter()
            .zip(props)
            .map(|(p, frac)| (counts.get(*p) as f64 - n as f64 * frac).abs())
            .fold(0.0, f64::max);
        max_deviation = max_deviation.max(dev);
        per_class_deviation.insert(label.to_string(), dev);
    }
    let disjoint = overlapping_ids.is_empty();
    let exhaustive = missing_ids.is_empty();
    Ok(VerificationReport {
        disjoint,
        overlapping_ids,
        exhaustive,
        missing_ids,
        max_deviation,
        per_class_deviation,
        tolerance: DEVIATION_TOLERANCE,
        passed: disjoint && exhaustive && max_deviation <= DEVIATION_TOLERANCE + 1e-9,
    })
}
