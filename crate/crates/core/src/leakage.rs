//! Cross-split leak detection: exact copies, near copies, and copies that
//! differ by a flip or right-angle rotation.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use image::RgbImage;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::ImageRecord;
use crate::hamming::{HammingIndex, ScanStrategy};
use crate::raster::{self, hamming, Dihedral, RasterError};
use crate::split::{Partition, SplitManifest};

#[derive(Debug, thiserror::Error)]
pub enum LeakError {
    #[error("no hashed record for split id {0:?}")]
    MissingHash(String),
    #[error(transparent)]
    Raster(#[from] RasterError),
    #[error("near threshold {0} outside 0..=64")]
    BadThreshold(u32),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LeakKind {
    Exact,
    Near,
    Transform,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct LeakFinding {
    pub eval_split: Partition,
    pub eval_id: String,
    pub train_id: String,
    pub kind: LeakKind,
    pub hamming: u32,
    /// Transform `T` with `eval ~ T(train)`; present iff `kind` is `transform`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transform: Option<Dihedral>,
}

impl LeakFinding {
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("finding serializes")
    }
}

pub fn findings_to_jsonl(findings: &[LeakFinding]) -> String {
    findings.iter().map(|f| f.to_json_line() + "\n").collect()
}

pub fn findings_from_jsonl(text: &str) -> Result<Vec<LeakFinding>, serde_json::Error> {
    text.lines().filter(|l| !l.trim().is_empty()).map(serde_json::from_str).collect()
}

struct Sides<'a> {
    train: Vec<&'a ImageRecord>,
    eval: Vec<(Partition, &'a ImageRecord)>,
}

fn sides<'a>(split: &SplitManifest, records: &'a [ImageRecord]) -> Result<Sides<'a>, LeakError> {
    let by_id: HashMap<&str, &ImageRecord> = records.iter().map(|r| (r.id.as_str(), r)).collect();
    let mut train = Vec::new();
    let mut eval = Vec::new();
    for (id, p) in &split.assignment.0 {
        let r = *by_id.get(id.as_str()).ok_or_else(|| LeakError::MissingHash(id.clone()))?;
        if p.is_eval() {
            eval.push((*p, r));
        } else {
            train.push(r);
        }
    }
    Ok(Sides { train, eval })
}

/// Every (train, val/test) pair with equal bytes (exact) or phash distance
/// within `near_threshold` (near). Sorted.
pub fn cross_split_scan(
    split: &SplitManifest,
    records: &[ImageRecord],
    near_threshold: u32,
    strategy: ScanStrategy,
) -> Result<Vec<LeakFinding>, LeakError> {
    if near_threshold > 64 {
        return Err(LeakError::BadThreshold(near_threshold));
    }
    let Sides { train, eval } = sides(split, records)?;
    let hashes: Vec<u64> = train.iter().map(|r| r.phash).collect();
    let index = HammingIndex::build(&hashes, strategy);
    let mut findings: Vec<LeakFinding> = eval
        .par_iter()
        .flat_map_iter(|(p, e)| {
            let mut out = Vec::new();
            for (i, d) in index.within(e.phash, near_threshold) {
                let t = train[i];
                let kind = if t.byte_hash == e.byte_hash { LeakKind::Exact } else { LeakKind::Near };
                out.push(LeakFinding {
                    eval_split: *p,
                    eval_id: e.id.clone(),
                    train_id: t.id.clone(),
                    kind,
                    hamming: d,
                    transform: None,
                });
            }
            out
        })
        .collect();
    findings.sort();
    Ok(findings)
}

/// Source of decoded rasters for the transform scan.
pub trait RasterSource: Sync {
    fn raster(&self, record: &ImageRecord) -> Result<RgbImage, RasterError>;
}

/// Loads rasters from each record's `path`.
pub struct PathRasters;

impl RasterSource for PathRasters {
    fn raster(&self, record: &ImageRecord) -> Result<RgbImage, RasterError> {
        raster::decode_path(std::path::Path::new(&record.path))
    }
}

impl RasterSource for HashMap<String, RgbImage> {
    fn raster(&self, record: &ImageRecord) -> Result<RgbImage, RasterError> {
        self.get(&record.id).cloned().ok_or_else(|| RasterError::Undecodable {
            source_name: record.id.clone(),
            reason: "raster not loaded".into(),
        })
    }
}

/// Dihedral-aware scan: for every eval image, hash its seven non-identity
/// dihedral variants and report train images within threshold of any of
/// them. Pairs already within threshold at the identity are left to
/// [`cross_split_scan`]. Each (train, eval) pair is reported once, with the
/// closest transform (ties broken by [`Dihedral::ALL`] order).
pub fn transform_invariant_scan(
    split: &SplitManifest,
    records: &[ImageRecord],
    rasters: &dyn RasterSource,
    near_threshold: u32,
    strategy: ScanStrategy,
) -> Result<Vec<LeakFinding>, LeakError> {
    if near_threshold > 64 {
        return Err(LeakError::BadThreshold(near_threshold));
    }
    let Sides { train, eval } = sides(split, records)?;
    let hashes: Vec<u64> = train.iter().map(|r| r.phash).collect();
    let index = HammingIndex::build(&hashes, strategy);
    let per_eval: Vec<Vec<LeakFinding>> = eval
        .par_iter()
        .map(|(p, e)| {
            let img = rasters.raster(e)?;
            let identity: BTreeSet<usize> =
                index.within(e.phash, near_threshold).into_iter().map(|(i, _)| i).collect();
            let mut best: BTreeMap<usize, (u32, Dihedral)> = BTreeMap::new();
            for variant in Dihedral::ALL.into_iter().skip(1) {
                let h = raster::dhash(&variant.apply(&img))?;
                for (i, d) in index.within(h, near_threshold) {
                    if identity.contains(&i) {
                        continue;
                    }
                    // variant(eval) ~ train  =>  eval ~ variant^-1(train)
                    let t = variant.inverse();
                    best.entry(i)
                        .and_modify(|cur| {
                            if d < cur.0 {
                                *cur = (d, t);
                            }
                        })
                        .or_insert((d, t));
                }
            }
            Ok(best
                .into_iter()
                .map(|(i, (d, t))| LeakFinding {
                    eval_split: *p,
                    eval_id: e.id.clone(),
                    train_id: train[i].id.clone(),
                    kind: LeakKind::Transform,
                    hamming: d,
                    transform: Some(t),
                })
                .collect())
        })
        .collect::<Result<_, LeakError>>()?;
    let mut findings: Vec<LeakFinding> = per_eval.into_iter().flatten().collect();
    findings.sort();
    Ok(findings)
}

/// Brute-force reference for [`cross_split_scan`]: every pair, no index.
pub fn brute_force_pairs(
    split: &SplitManifest,
    records: &[ImageRecord],
    near_threshold: u32,
) -> Result<Vec<LeakFinding>, LeakError> {
    let Sides { train, eval } = sides(split, records)?;
    let mut out = Vec::new();
    for (p, e) in &eval {
        for t in &train {
            let d = hamming(e.phash, t.phash);
            if d <= near_threshold || e.byte_hash == t.byte_hash {
                out.push(LeakFinding {
                    eval_split: *p,
                    eval_id: e.id.clone(),
                    train_id: t.id.clone(),
                    kind: if e.byte_hash == t.byte_hash { LeakKind::Exact } else { LeakKind::Near },
                    hamming: d,
                    transform: None,
                });
            }
        }
    }
    out.sort();
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeakageSummary {
    pub eval_images: usize,
    pub implicated: usize,
    pub rate: f64,
    /// Fraction of eval images implicated by at least one finding of each kind.
    pub rate_by_kind: BTreeMap<LeakKind, f64>,
    pub implicated_by_split: BTreeMap<Partition, usize>,
    pub findings: usize,
}

impl LeakageSummary {
    /// CI-gate exit status: nonzero whenever any finding exists.
    pub fn exit_status(&self) -> i32 {
        i32::from(self.findings > 0)
    }
}

pub fn leakage_rate(findings: &[LeakFinding], split: &SplitManifest) -> LeakageSummary {
    let eval_images = split.assignment.0.iter().filter(|(_, p)| p.is_eval()).count();
    let implicated_ids: BTreeSet<(&str, Partition)> =
        findings.iter().map(|f| (f.eval_id.as_str(), f.eval_split)).collect();
    let mut implicated_by_split = BTreeMap::new();
    for (_, p) in &implicated_ids {
        *implicated_by_split.entry(*p).or_insert(0) += 1;
    }
    let frac = |n: usize| if eval_images == 0 { 0.0 } else { n as f64 / eval_images as f64 };
    let mut rate_by_kind = BTreeMap::new();
    for kind in [LeakKind::Exact, LeakKind::Near, LeakKind::Transform] {
        let ids: BTreeSet<&str> = findings.iter().filter(|f| f.kind == kind).map(|f| f.eval_id.as_str()).collect();
        rate_by_kind.insert(kind, frac(ids.len()));
    }
    LeakageSummary {
        eval_images,
        implicated: implicated_ids.len(),
        rate: frac(implicated_ids.len()),
        rate_by_kind,
        implicated_by_split,
        findings: findings.len(),
    }
}
