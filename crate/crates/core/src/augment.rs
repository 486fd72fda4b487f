//! Seeded image augmentation that can only target the training partition.
//!
//! Geometric operations sample with bilinear interpolation; samples that
//! fall outside the frame are clamped to the nearest edge pixel.

use std::collections::BTreeSet;

use image::{Rgb, RgbImage};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::DatasetManifest;
use crate::raster::{luma, Dihedral};
use crate::seed;
use crate::split::{Partition, SplitManifest};

pub const AUGMENT_SCHEMA: &str = "rigorbench_augment_v1";
pub const AUG_PREFIX: &str = "aug:";
/// Out-of-frame fill rule recorded in provenance.
pub const FILL_RULE: &str = "edge_clamp";

#[derive(Debug, thiserror::Error)]
pub enum AugmentError {
    #[error("augmentation of the {0} partition is refused; augment after splitting, train only")]
    RefusesEvalAugmentation(String),
    #[error("invalid augmentation plan: {0}")]
    BadPlan(String),
    #[error("split id {0:?} not found in manifest")]
    UnknownId(String),
}

/// A concrete, fully parameterised operation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum AugmentOp {
    FlipH,
    FlipV,
    /// Counter-clockwise, in degrees.
    Rotate { degrees: f64 },
    /// Factor > 1 zooms in.
    Zoom { factor: f64 },
    /// Fractions of width / height; positive moves content right / down.
    Shift { dx: f64, dy: f64 },
    Brightness { factor: f64 },
    Contrast { factor: f64 },
}

fn clamp_u8(v: f64) -> u8 {
    (v + 0.5 + 1e-9).floor().clamp(0.0, 255.0) as u8
}

/// Bilinear sample at continuous pixel coordinates (pixel centres at
/// integer positions), clamping to the edge.
fn sample(img: &RgbImage, x: f64, y: f64) -> [f64; 3] {
    let (w, h) = img.dimensions();
    let x = x.clamp(0.0, (w - 1) as f64);
    let y = y.clamp(0.0, (h - 1) as f64);
    let x0 = x.floor() as u32;
    let y0 = y.floor() as u32;
    let x1 = (x0 + 1).min(w - 1);
    let y1 = (y0 + 1).min(h - 1);
    let fx = x - f64::from(x0);
    let fy = y - f64::from(y0);
    let mut out = [0.0; 3];
    let (p00, p10, p01, p11) = (img.get_pixel(x0, y0), img.get_pixel(x1, y0), img.get_pixel(x0, y1), img.get_pixel(x1, y1));
    for (c, o) in out.iter_mut().enumerate() {
        let top = f64::from(p00[c]) * (1.0 - fx) + f64::from(p10[c]) * fx;
        let bottom = f64::from(p01[c]) * (1.0 - fx) + f64::from(p11[c]) * fx;
        *o = top * (1.0 - fy) + bottom * fy;
    }
    out
}

/// Resample through an inverse mapping from output to source coordinates.
fn warp(img: &RgbImage, inverse: impl Fn(f64, f64) -> (f64, f64)) -> RgbImage {
    RgbImage::from_fn(img.width(), img.height(), |x, y| {
        let (sx, sy) = inverse(f64::from(x), f64::from(y));
        let s = sample(img, sx, sy);
        Rgb([clamp_u8(s[0]), clamp_u8(s[1]), clamp_u8(s[2])])
    })
}

impl AugmentOp {
    pub fn validate(&self) -> Result<(), AugmentError> {
        match *self {
            AugmentOp::Zoom { factor } | AugmentOp::Brightness { factor } | AugmentOp::Contrast { factor }
                if !(factor.is_finite() && factor > 0.0) =>
            {
                Err(AugmentError::BadPlan(format!("factor must be positive, got {factor}")))
            }
            AugmentOp::Shift { dx, dy } if !(dx.abs() <= 0.5 && dy.abs() <= 0.5) => {
                Err(AugmentError::BadPlan(format!("shift fractions must be within 0.5, got ({dx}, {dy})")))
            }
            AugmentOp::Rotate { degrees } if !degrees.is_finite() => {
                Err(AugmentError::BadPlan("rotation must be finite".into()))
            }
            _ => Ok(()),
        }
    }

    pub fn apply(&self, img: &RgbImage) -> RgbImage {
        let (w, h) = img.dimensions();
        let (cx, cy) = ((f64::from(w) - 1.0) / 2.0, (f64::from(h) - 1.0) / 2.0);
        match *self {
            AugmentOp::FlipH => Dihedral::FlipH.apply(img),
            AugmentOp::FlipV => Dihedral::FlipV.apply(img),
            AugmentOp::Rotate { degrees } => {
                let quarter = degrees / 90.0;
                if w == h && quarter == quarter.round() {
                    let q = (quarter.round() as i64).rem_euclid(4) as u32;
                    return Dihedral::from_parts(false, false, q).apply(img);
                }
                let (s, c) = degrees.to_radians().sin_cos();
                warp(img, |x, y| {
                    let (dx, dy) = (x - cx, y - cy);
                    (cx + dx * c - dy * s, cy + dx * s + dy * c)
                })
            }
            AugmentOp::Zoom { factor } => {
                if factor == 1.0 {
                    return img.clone();
                }
                warp(img, |x, y| (cx + (x - cx) / factor, cy + (y - cy) / factor))
            }
            AugmentOp::Shift { dx, dy } => {
                let (ox, oy) = (dx * f64::from(w), dy * f64::from(h));
                warp(img, |x, y| (x - ox, y - oy))
            }
            AugmentOp::Brightness { factor } => {
                // Scale luma, keep chroma: each channel moves by (f - 1) * Y.
                let mut out = img.clone();
                for p in out.pixels_mut() {
                    let y = luma(p[0], p[1], p[2]);
                    let delta = (factor - 1.0) * y;
                    *p = Rgb([0, 1, 2].map(|c| clamp_u8(f64::from(p[c]) + delta)));
                }
                out
            }
            AugmentOp::Contrast { factor } => {
                let n = f64::from(w) * f64::from(h);
                let mean = img.pixels().map(|p| luma(p[0], p[1], p[2])).sum::<f64>() / n;
                let mut out = img.clone();
                for p in out.pixels_mut() {
                    *p = Rgb([0, 1, 2].map(|c| clamp_u8(mean + factor * (f64::from(p[c]) - mean))));
                }
                out
            }
        }
    }
}

/// Declared range for one operation in a plan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum OpSpec {
    FlipH {
        #[serde(default = "half")]
        p: f64,
    },
    FlipV {
        #[serde(default = "half")]
        p: f64,
    },
    /// Either a uniform range or a discrete set of angles.
    Rotate {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        range: Option<[f64; 2]>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        choices: Option<Vec<f64>>,
    },
    Zoom { range: [f64; 2] },
    Shift { max_dx: f64, max_dy: f64 },
    Brightness { range: [f64; 2] },
    Contrast { range: [f64; 2] },
}

fn half() -> f64 {
    0.5
}

fn uniform(rng: &mut ChaCha8Rng, [lo, hi]: [f64; 2]) -> f64 {
    if hi > lo {
        rng.random_range(lo..=hi)
    } else {
        lo
    }
}

impl OpSpec {
    fn validate(&self) -> Result<(), AugmentError> {
        let bad = |m: String| Err(AugmentError::BadPlan(m));
        match self {
            OpSpec::FlipH { p } | OpSpec::FlipV { p } if !(0.0..=1.0).contains(p) => bad(format!("probability {p}")),
            OpSpec::Rotate { range: None, choices: None } => bad("rotate needs range or choices".into()),
            OpSpec::Rotate { choices: Some(c), .. } if c.is_empty() => bad("rotate choices empty".into()),
            OpSpec::Zoom { range } | OpSpec::Brightness { range } | OpSpec::Contrast { range }
                if !(range[0] > 0.0 && range[1] >= range[0]) =>
            {
                bad(format!("factor range {range:?} must be positive and ordered"))
            }
            OpSpec::Shift { max_dx, max_dy } if !(*max_dx >= 0.0 && *max_dx <= 0.5 && *max_dy >= 0.0 && *max_dy <= 0.5) => {
                bad(format!("shift bounds ({max_dx}, {max_dy}) must lie in [0, 0.5]"))
            }
            _ => Ok(()),
        }
    }

    /// Draws the concrete op for one copy; `None` when a flip is skipped.
    pub fn sample(&self, rng: &mut ChaCha8Rng) -> Option<AugmentOp> {
        match self {
            OpSpec::FlipH { p } => rng.random_bool(*p).then_some(AugmentOp::FlipH),
            OpSpec::FlipV { p } => rng.random_bool(*p).then_some(AugmentOp::FlipV),
            OpSpec::Rotate { range, choices } => {
                let degrees = match (choices, range) {
                    (Some(c), _) => c[rng.random_range(0..c.len())],
                    (None, Some(r)) => uniform(rng, *r),
                    (None, None) => 0.0,
                };
                Some(AugmentOp::Rotate { degrees })
            }
            OpSpec::Zoom { range } => Some(AugmentOp::Zoom { factor: uniform(rng, *range) }),
            OpSpec::Shift { max_dx, max_dy } => Some(AugmentOp::Shift {
                dx: uniform(rng, [-max_dx, *max_dx]),
                dy: uniform(rng, [-max_dy, *max_dy]),
            }),
            OpSpec::Brightness { range } => Some(AugmentOp::Brightness { factor: uniform(rng, *range) }),
            OpSpec::Contrast { range } => Some(AugmentOp::Contrast { factor: uniform(rng, *range) }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentPlan {
    pub schema: String,
    pub ops: Vec<OpSpec>,
    pub copies_per_image: usize,
    pub seed: u64,
}

#[derive(Deserialize)]
struct PlanFile {
    schema: String,
    ops: Vec<OpSpec>,
    copies_per_image: usize,
    #[serde(default)]
    seed: Option<u64>,
    /// Accepted only so that naming val/test can be refused explicitly.
    #[serde(default)]
    partitions: Option<Vec<String>>,
}

impl AugmentPlan {
    /// Flips and right-angle rotations: every copy is a dihedral variant of
    /// its source, so the transform-aware leak scan can confirm each copy.
    pub fn dihedral(copies_per_image: usize, seed: u64) -> Self {
        AugmentPlan {
            schema: AUGMENT_SCHEMA.to_string(),
            ops: vec![
                OpSpec::FlipH { p: 0.5 },
                OpSpec::FlipV { p: 0.5 },
                OpSpec::Rotate { range: None, choices: Some(vec![0.0, 90.0, 180.0, 270.0]) },
            ],
            copies_per_image,
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), AugmentError> {
        if self.schema != AUGMENT_SCHEMA {
            return Err(AugmentError::BadPlan(format!("unexpected schema {:?}", self.schema)));
        }
        self.ops.iter().try_for_each(OpSpec::validate)
    }

    /// Parses a plan file. `default_seed` applies when the file has none.
    pub fn from_json(text: &str, default_seed: u64) -> Result<Self, AugmentError> {
        let f: PlanFile = serde_json::from_str(text).map_err(|e| AugmentError::BadPlan(e.to_string()))?;
        if let Some(parts) = &f.partitions {
            if let Some(bad) = parts.iter().find(|p| p.as_str() != "train") {
                return Err(AugmentError::RefusesEvalAugmentation(bad.clone()));
            }
        }
        let plan = AugmentPlan { schema: f.schema, ops: f.ops, copies_per_image: f.copies_per_image, seed: f.seed.unwrap_or(default_seed) };
        plan.validate()?;
        Ok(plan)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plan serializes")
    }

    /// Ops for each copy of `source_id`, drawn from a stream seeded by
    /// `(plan seed, source id)`.
    pub fn sample_copies(&self, source_id: &str) -> Vec<Vec<AugmentOp>> {
        let mut rng = seed::rng_for(self.seed, &format!("augment/{source_id}"));
        (0..self.copies_per_image).map(|_| self.ops.iter().filter_map(|s| s.sample(&mut rng)).collect()).collect()
    }
}

pub fn apply_all(img: &RgbImage, ops: &[AugmentOp]) -> RgbImage {
    ops.iter().fold(img.clone(), |acc, op| op.apply(&acc))
}

/// Collapses a chain of flips and right-angle rotations on a square image
/// into one dihedral element; `None` if any other op is present.
pub fn as_dihedral(ops: &[AugmentOp]) -> Option<Dihedral> {
    let mut acc = Dihedral::Identity;
    for op in ops {
        let step = match *op {
            AugmentOp::FlipH => Dihedral::FlipH,
            AugmentOp::FlipV => Dihedral::FlipV,
            AugmentOp::Rotate { degrees } if (degrees / 90.0).fract() == 0.0 => {
                Dihedral::from_parts(false, false, ((degrees / 90.0) as i64).rem_euclid(4) as u32)
            }
            _ => return None,
        };
        acc = compose(step, acc);
    }
    Some(acc)
}

/// `second ∘ first`.
fn compose(second: Dihedral, first: Dihedral) -> Dihedral {
    let parts = |d: Dihedral| -> (bool, u32) {
        match d {
            Dihedral::Identity => (false, 0),
            Dihedral::Rot90 => (false, 1),
            Dihedral::Rot180 => (false, 2),
            Dihedral::Rot270 => (false, 3),
            Dihedral::FlipH => (true, 0),
            Dihedral::FlipHRot90 => (true, 1),
            Dihedral::FlipV => (true, 2),
            Dihedral::FlipHRot270 => (true, 3),
        }
    };
    // d = rot^r . flip^f
    let (f1, r1) = parts(first);
    let (f2, r2) = parts(second);
    // rot^r2 . flip^f2 . rot^r1 . flip^f1 = rot^(r2 +/- r1) . flip^(f1 xor f2)
    let r = if f2 { (r2 + 4 - r1) % 4 } else { (r2 + r1) % 4 };
    Dihedral::from_parts(f1 ^ f2, false, r)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentedRecord {
    /// `aug:<source id>#<copy index>`.
    pub id: String,
    pub source_id: String,
    pub label: String,
    pub copy_index: usize,
    pub ops: Vec<AugmentOp>,
    pub fill: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentedManifest {
    pub schema: String,
    pub plan: AugmentPlan,
    pub split_seed: u64,
    /// Training ids after augmentation: originals followed by copies.
    pub train_ids: Vec<String>,
    pub val_ids: Vec<String>,
    pub test_ids: Vec<String>,
    pub augmented: Vec<AugmentedRecord>,
}

impl AugmentedManifest {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("augmented manifest serializes")
    }
}

pub fn augmented_id(source_id: &str, copy: usize) -> String {
    format!("{AUG_PREFIX}{source_id}#{copy}")
}

/// Adds `copies_per_image` augmented records per training image. Val and
/// test partitions pass through untouched; there is no way to target them.
pub fn augment_training_set(
    split: &SplitManifest,
    manifest: &DatasetManifest,
    plan: &AugmentPlan,
) -> Result<AugmentedManifest, AugmentError> {
    plan.validate()?;
    let mut augmented = Vec::new();
    let mut train_ids = Vec::new();
    for id in split.ids_in(Partition::Train) {
        let rec = manifest.get(id).ok_or_else(|| AugmentError::UnknownId(id.to_string()))?;
        train_ids.push(id.to_string());
        for (copy, ops) in plan.sample_copies(id).into_iter().enumerate() {
            augmented.push(AugmentedRecord {
                id: augmented_id(id, copy),
                source_id: id.to_string(),
                label: rec.label.clone(),
                copy_index: copy,
                ops,
                fill: FILL_RULE.to_string(),
            });
        }
    }
    train_ids.extend(augmented.iter().map(|a| a.id.clone()));
    let own = |p| split.ids_in(p).into_iter().map(str::to_string).collect::<Vec<_>>();
    let out = AugmentedManifest {
        schema: AUGMENT_SCHEMA.to_string(),
        plan: plan.clone(),
        split_seed: split.seed,
        train_ids,
        val_ids: own(Partition::Val),
        test_ids: own(Partition::Test),
        augmented,
    };
    debug_assert!({
        let eval: BTreeSet<&String> = out.val_ids.iter().chain(&out.test_ids).collect();
        out.augmented.iter().all(|a| !eval.contains(&a.id) && !eval.contains(&a.source_id))
    });
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixture() -> RgbImage {
        RgbImage::from_fn(5, 4, |x, y| Rgb([(x * 40) as u8, (y * 60) as u8, ((x + y) * 17) as u8]))
    }

    #[test]
    fn flip_is_an_involution() {
        let img = fixture();
        assert_eq!(AugmentOp::FlipH.apply(&AugmentOp::FlipH.apply(&img)), img);
        assert_eq!(AugmentOp::FlipV.apply(&AugmentOp::FlipV.apply(&img)), img);
    }

    #[test]
    fn neutral_parameters_are_identity() {
        let img = fixture();
        for op in [
            AugmentOp::Rotate { degrees: 0.0 },
            AugmentOp::Zoom { factor: 1.0 },
            AugmentOp::Brightness { factor: 1.0 },
            AugmentOp::Contrast { factor: 1.0 },
            AugmentOp::Shift { dx: 0.0, dy: 0.0 },
        ] {
            assert_eq!(op.apply(&img), img, "{op:?}");
        }
    }

    #[test]
    fn rotate_90_on_two_by_two() {
        // a b      b d
        // c d  ->  a c
        let v = |n: u8| Rgb([n, n, n]);
        let img = RgbImage::from_fn(2, 2, |x, y| v([10, 20, 30, 40][(y * 2 + x) as usize]));
        let r = AugmentOp::Rotate { degrees: 90.0 }.apply(&img);
        let got: Vec<u8> = r.pixels().map(|p| p[0]).collect();
        assert_eq!(got, vec![20, 40, 10, 30]);
    }

    #[test]
    fn bilinear_rotation_matches_exact_quarter_turn() {
        // A non-square image takes the bilinear path; rotate by 180 keeps
        // dimensions, so it must equal the pixel permutation.
        let img = fixture();
        let r = AugmentOp::Rotate { degrees: 180.0 }.apply(&img);
        assert_eq!(r, Dihedral::Rot180.apply(&img));
    }

    #[test]
    fn brightness_clamps() {
        let img = RgbImage::from_pixel(2, 2, Rgb([200, 200, 200]));
        let b = AugmentOp::Brightness { factor: 2.0 }.apply(&img);
        assert!(b.pixels().all(|p| p.0 == [255, 255, 255]));
        let d = AugmentOp::Brightness { factor: 0.5 }.apply(&img);
        assert!(d.pixels().all(|p| p.0 == [100, 100, 100]));
    }

    #[test]
    fn integer_shift_moves_content() {
        let img = RgbImage::from_fn(4, 1, |x, _| Rgb([(x * 10) as u8, 0, 0]));
        let s = AugmentOp::Shift { dx: 0.25, dy: 0.0 }.apply(&img);
        let got: Vec<u8> = s.pixels().map(|p| p[0]).collect();
        assert_eq!(got, vec![0, 0, 10, 20]);
    }

    #[test]
    fn op_validation() {
        assert!(AugmentOp::Zoom { factor: 0.0 }.validate().is_err());
        assert!(AugmentOp::Shift { dx: 0.6, dy: 0.0 }.validate().is_err());
        assert!(AugmentOp::Brightness { factor: 1.2 }.validate().is_ok());
    }

    #[test]
    fn plan_file_naming_eval_partitions_is_refused() {
        let text = r#"{"schema":"rigorbench_augment_v1","ops":[],"copies_per_image":1,"partitions":["train","test"]}"#;
        assert!(matches!(AugmentPlan::from_json(text, 1), Err(AugmentError::RefusesEvalAugmentation(p)) if p == "test"));
        let ok = r#"{"schema":"rigorbench_augment_v1","ops":[{"op":"flip_h"}],"copies_per_image":1,"partitions":["train"]}"#;
        assert_eq!(AugmentPlan::from_json(ok, 9).unwrap().seed, 9);
    }

    #[test]
    fn sampling_is_per_source_stable() {
        let plan = AugmentPlan::dihedral(3, 42);
        assert_eq!(plan.sample_copies("a"), plan.sample_copies("a"));
        assert_eq!(plan.sample_copies("a").len(), 3);
    }

    #[test]
    fn dihedral_chain_collapses_to_pixel_result() {
        let img = RgbImage::from_fn(3, 3, |x, y| Rgb([(y * 3 + x) as u8, 0, 0]));
        let plan = AugmentPlan::dihedral(8, 7);
        for ops in plan.sample_copies("src") {
            let d = as_dihedral(&ops).unwrap();
            assert_eq!(d.apply(&img), apply_all(&img, &ops), "{ops:?}");
        }
    }
}
