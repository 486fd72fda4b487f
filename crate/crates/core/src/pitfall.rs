//! Augment-before-split inflation simulator.
//!
//! A synthetic corpus of coloured blobs on noisy backgrounds is evaluated
//! with a 1-nearest-neighbour classifier on dHash under two protocols:
//! augmenting the whole corpus and then splitting (flawed), or splitting
//! and then augmenting the training partition only (sound).

use std::collections::HashMap;
use std::io::Cursor;

use image::{ImageFormat, Rgb, RgbImage};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Binomial, DiscreteCDF};

use crate::augment::{self, AugmentPlan};
use crate::corpus::{self, DatasetManifest, ExclusionLedger, ImageRecord, DEFAULT_NEAR_THRESHOLD};
use crate::hamming::ScanStrategy;
use crate::leakage::{self, LeakageSummary};
use crate::metrics::{self, MetricReport, PredictionRecord};
use crate::raster::{self, Dihedral};
use crate::seed;
use crate::split::{self, Assignment, Partition, SplitManifest, SplitSpec};

#[derive(Debug, thiserror::Error)]
pub enum PitfallError {
    #[error("invalid synthetic spec: {0}")]
    BadSpec(String),
    #[error("could not place image {index} of class {label} after {attempts} attempts")]
    CorpusExhausted { label: String, index: usize, attempts: usize },
    #[error(transparent)]
    Corpus(#[from] corpus::CorpusError),
    #[error(transparent)]
    Split(#[from] split::SplitError),
    #[error(transparent)]
    Augment(#[from] augment::AugmentError),
    #[error(transparent)]
    Leak(#[from] leakage::LeakError),
    #[error(transparent)]
    Metrics(#[from] metrics::MetricsError),
    #[error(transparent)]
    Raster(#[from] raster::RasterError),
}

const PALETTE: [[u8; 3]; 8] = [
    [200, 60, 60],
    [40, 160, 60],
    [60, 60, 200],
    [230, 210, 80],
    [150, 60, 170],
    [40, 180, 190],
    [240, 140, 40],
    [20, 20, 20],
];

const MAX_ATTEMPTS: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n_classes: usize,
    pub per_class: usize,
    pub image_size: u32,
    /// Mean blob colour per class; cycles through a fixed palette when
    /// shorter than `n_classes`.
    pub class_colors: Vec<[u8; 3]>,
    /// Per-channel uniform jitter around the class colour.
    pub color_jitter: u8,
    /// Blob radius as a fraction of the image side.
    pub radius_range: (f64, f64),
    /// Per-pixel uniform grey noise amplitude around mid-grey.
    pub noise_amplitude: u8,
    /// Every image is farther than this from every dihedral variant of
    /// every other image.
    pub min_separation: u32,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n_classes: 4,
            per_class: 50,
            image_size: 32,
            class_colors: PALETTE[..4].to_vec(),
            color_jitter: 20,
            radius_range: (0.2, 0.35),
            noise_amplitude: 40,
            min_separation: DEFAULT_NEAR_THRESHOLD,
            seed: crate::DEFAULT_SEED,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<(), PitfallError> {
        let bad = |m: &str| Err(PitfallError::BadSpec(m.into()));
        if self.n_classes < 2 {
            return bad("n_classes must be >= 2");
        }
        if self.per_class < 4 {
            return bad("per_class must be >= 4");
        }
        if self.image_size < 16 {
            return bad("image_size must be >= 16");
        }
        let (lo, hi) = self.radius_range;
        if !(0.0 < lo && lo <= hi && hi <= 0.5) {
            return bad("radius_range must satisfy 0 < lo <= hi <= 0.5");
        }
        if self.min_separation >= 32 {
            return bad("min_separation must be < 32");
        }
        Ok(())
    }

    pub fn label(&self, class: usize) -> String {
        format!("class{class}")
    }

    fn color(&self, class: usize) -> [u8; 3] {
        if self.class_colors.is_empty() {
            PALETTE[class % PALETTE.len()]
        } else {
            self.class_colors[class % self.class_colors.len()]
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCorpus {
    pub manifest: DatasetManifest,
    pub images: HashMap<String, RgbImage>,
}

fn draw_image(spec: &SyntheticSpec, class: usize, rng: &mut ChaCha8Rng) -> RgbImage {
    let n = spec.image_size;
    let side = f64::from(n);
    let amp = i32::from(spec.noise_amplitude);
    let jitter = i32::from(spec.color_jitter);
    let base = spec.color(class);
    let color: [u8; 3] = std::array::from_fn(|c| (i32::from(base[c]) + rng.random_range(-jitter..=jitter)).clamp(0, 255) as u8);
    let radius = side * rng.random_range(spec.radius_range.0..=spec.radius_range.1);
    let cx = rng.random_range(radius..=side - radius);
    let cy = rng.random_range(radius..=side - radius);
    let mut img = RgbImage::new(n, n);
    for y in 0..n {
        for x in 0..n {
            let dx = f64::from(x) + 0.5 - cx;
            let dy = f64::from(y) + 0.5 - cy;
            let noise = rng.random_range(-amp..=amp);
            let px = if dx * dx + dy * dy <= radius * radius {
                color.map(|c| (i32::from(c) + noise / 2).clamp(0, 255) as u8)
            } else {
                [(128 + noise).clamp(0, 255) as u8; 3]
            };
            img.put_pixel(x, y, Rgb(px));
        }
    }
    img
}

pub fn png_bytes(img: &RgbImage) -> Vec<u8> {
    let mut buf = Cursor::new(Vec::new());
    img.write_to(&mut buf, ImageFormat::Png).expect("in-memory png encoding");
    buf.into_inner()
}

fn record_for(id: &str, label: &str, img: &RgbImage) -> Result<ImageRecord, PitfallError> {
    Ok(ImageRecord {
        id: id.into(),
        path: format!("synthetic/{id}.png"),
        label: label.into(),
        byte_hash: corpus::compute_byte_hash(&png_bytes(img)),
        phash: raster::dhash(img)?,
        width: img.width(),
        height: img.height(),
    })
}

fn variant_hashes(img: &RgbImage) -> Result<[u64; 8], PitfallError> {
    let mut out = [0u64; 8];
    for (o, d) in out.iter_mut().zip(Dihedral::ALL) {
        *o = raster::dhash(&d.apply(img))?;
    }
    Ok(out)
}

/// Deterministic per seed. Candidates are redrawn until every dihedral
/// variant of the new image is farther than `min_separation` from every
/// accepted image, and vice versa.
pub fn gen_corpus(spec: &SyntheticSpec) -> Result<SyntheticCorpus, PitfallError> {
    spec.validate()?;
    let mut accepted: Vec<[u64; 8]> = Vec::new();
    let mut records = Vec::new();
    let mut images = HashMap::new();
    for class in 0..spec.n_classes {
        let label = spec.label(class);
        let mut rng = seed::rng_for(spec.seed, &format!("synthetic/{label}"));
        for index in 0..spec.per_class {
            let mut attempts = 0;
            let (img, hashes) = loop {
                attempts += 1;
                if attempts > MAX_ATTEMPTS {
                    return Err(PitfallError::CorpusExhausted { label, index, attempts: MAX_ATTEMPTS });
                }
                let img = draw_image(spec, class, &mut rng);
                let hashes = variant_hashes(&img)?;
                let clash = accepted.iter().any(|prev| {
                    hashes.iter().any(|&h| raster::hamming(h, prev[0]) <= spec.min_separation)
                        || prev.iter().any(|&h| raster::hamming(h, hashes[0]) <= spec.min_separation)
                });
                if !clash {
                    break (img, hashes);
                }
            };
            accepted.push(hashes);
            let id = format!("{label}/img{index:03}");
            records.push(record_for(&id, &label, &img)?);
            images.insert(id, img);
        }
    }
    Ok(SyntheticCorpus { manifest: DatasetManifest::new(records)?, images })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NnPrediction {
    pub label: String,
    pub neighbour_id: String,
    pub hamming: u32,
    pub confidence: f64,
}

/// 1-nearest neighbour on dHash distance; ties go to the smallest id.
/// Confidence is `1 - hamming / 64`. `None` when `train` is empty.
pub fn nn_classify(train: &[ImageRecord], query: u64) -> Option<NnPrediction> {
    let best = train.iter().min_by(|a, b| {
        raster::hamming(a.phash, query).cmp(&raster::hamming(b.phash, query)).then_with(|| a.id.cmp(&b.id))
    })?;
    let d = raster::hamming(best.phash, query);
    Some(NnPrediction {
        label: best.label.clone(),
        neighbour_id: best.id.clone(),
        hamming: d,
        confidence: 1.0 - f64::from(d) / 64.0,
    })
}

pub fn nn_classify_image(train: &[ImageRecord], query: &RgbImage) -> Result<Option<NnPrediction>, PitfallError> {
    Ok(nn_classify(train, raster::dhash(query)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Protocol {
    FlawedPreSplit,
    SoundPostSplit,
}

impl Protocol {
    pub fn as_str(self) -> &'static str {
        match self {
            Protocol::FlawedPreSplit => "flawed_pre_split",
            Protocol::SoundPostSplit => "sound_post_split",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolResult {
    pub protocol: Protocol,
    pub seed: u64,
    pub train_size: usize,
    pub test_size: usize,
    pub report: MetricReport,
    pub leakage: LeakageSummary,
}

impl ProtocolResult {
    pub fn accuracy(&self) -> f64 {
        self.report.macro_avg.accuracy
    }
}

/// Every augmented copy of every source in `sources`, with its raster.
fn augmented_copies(
    sources: &[&ImageRecord],
    images: &HashMap<String, RgbImage>,
    plan: &AugmentPlan,
) -> Result<Vec<(ImageRecord, RgbImage)>, PitfallError> {
    let per_source: Vec<Vec<(ImageRecord, RgbImage)>> = sources
        .par_iter()
        .map(|r| {
            let src = &images[&r.id];
            plan.sample_copies(&r.id)
                .into_iter()
                .enumerate()
                .map(|(copy, ops)| {
                    let img = augment::apply_all(src, &ops);
                    let id = augment::augmented_id(&r.id, copy);
                    Ok((record_for(&id, &r.label, &img)?, img))
                })
                .collect::<Result<Vec<_>, PitfallError>>()
        })
        .collect::<Result<_, _>>()?;
    Ok(per_source.into_iter().flatten().collect())
}

fn stamped(records: Vec<ImageRecord>) -> Result<DatasetManifest, PitfallError> {
    let m = DatasetManifest::new(records)?;
    let empty = ExclusionLedger { schema: corpus::MANIFEST_SCHEMA.into(), entries: vec![] };
    Ok(corpus::apply_exclusions(&m, &empty)?)
}

fn evaluate_split(
    protocol: Protocol,
    seed: u64,
    split: &SplitManifest,
    records: &[ImageRecord],
    images: &HashMap<String, RgbImage>,
    labels: &[String],
) -> Result<ProtocolResult, PitfallError> {
    let by_id: HashMap<&str, &ImageRecord> = records.iter().map(|r| (r.id.as_str(), r)).collect();
    let train: Vec<ImageRecord> = split.ids_in(Partition::Train).into_iter().map(|id| by_id[id].clone()).collect();
    let test_ids = split.ids_in(Partition::Test);
    let predictions: Vec<PredictionRecord> = test_ids
        .iter()
        .map(|id| {
            let q = by_id[id];
            let nn = nn_classify(&train, q.phash).expect("training partition is non-empty");
            PredictionRecord {
                image_id: q.id.clone(),
                true_label: q.label.clone(),
                predicted_label: nn.label,
                probabilities: vec![],
                split: Partition::Test,
            }
        })
        .collect();
    let report = metrics::evaluate(&predictions, labels)?;
    let mut findings = leakage::cross_split_scan(split, records, DEFAULT_NEAR_THRESHOLD, ScanStrategy::Auto)?;
    findings.extend(leakage::transform_invariant_scan(split, records, images, DEFAULT_NEAR_THRESHOLD, ScanStrategy::Auto)?);
    findings.sort();
    let leakage = leakage::leakage_rate(&findings, split);
    Ok(ProtocolResult { protocol, seed, train_size: train.len(), test_size: test_ids.len(), report, leakage })
}

/// Runs one arm. `seed` drives the split and the augmentation draws; the
/// corpus is fixed by its own spec.
pub fn run_protocol(
    corpus: &SyntheticCorpus,
    protocol: Protocol,
    plan: &AugmentPlan,
    split_spec: &SplitSpec,
) -> Result<ProtocolResult, PitfallError> {
    plan.validate()?;
    let originals: Vec<&ImageRecord> = corpus.manifest.records.iter().collect();
    let labels = {
        let mut l = corpus.manifest.labels();
        l.sort();
        l
    };
    match protocol {
        Protocol::FlawedPreSplit => {
            let copies = augmented_copies(&originals, &corpus.images, plan)?;
            let mut images = corpus.images.clone();
            let mut records = corpus.manifest.records.clone();
            for (r, img) in copies {
                images.insert(r.id.clone(), img);
                records.push(r);
            }
            let manifest = stamped(records)?;
            let split = split::stratified_holdout(&manifest, split_spec)?;
            evaluate_split(protocol, split_spec.seed, &split, &manifest.records, &images, &labels)
        }
        Protocol::SoundPostSplit => {
            let manifest = stamped(corpus.manifest.records.clone())?;
            let mut split = split::stratified_holdout(&manifest, split_spec)?;
            let train: Vec<&ImageRecord> =
                split.ids_in(Partition::Train).into_iter().map(|id| manifest.get(id).expect("split id")).collect();
            let copies = augmented_copies(&train, &corpus.images, plan)?;
            let mut images = corpus.images.clone();
            let mut records = manifest.records.clone();
            let mut assignment = split.assignment.0.clone();
            for (r, img) in copies {
                assignment.push((r.id.clone(), Partition::Train));
                images.insert(r.id.clone(), img);
                records.push(r);
            }
            assignment.sort();
            split.assignment = Assignment(assignment);
            evaluate_split(protocol, split_spec.seed, &split, &records, &images, &labels)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedRow {
    pub seed: u64,
    pub flawed_accuracy: f64,
    pub sound_accuracy: f64,
    pub delta: f64,
    pub flawed_leakage_rate: f64,
    pub sound_leakage_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignTest {
    pub positive: usize,
    pub negative: usize,
    pub ties: usize,
    /// Two-sided exact binomial p over the non-tied pairs.
    pub p_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaSummary {
    pub mean: f64,
    pub min: f64,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InflationReport {
    pub schema: String,
    pub corpus: SyntheticSpec,
    pub plan: AugmentPlan,
    pub split: SplitSpec,
    pub rows: Vec<PairedRow>,
    pub delta: DeltaSummary,
    /// Absent for a single seed.
    pub sign_test: Option<SignTest>,
}

pub const SIMULATE_SCHEMA: &str = "rigorbench_simulate_v1";

pub fn sign_test(deltas: &[f64]) -> SignTest {
    let positive = deltas.iter().filter(|d| **d > 0.0).count();
    let negative = deltas.iter().filter(|d| **d < 0.0).count();
    let ties = deltas.len() - positive - negative;
    let n = (positive + negative) as u64;
    let p_value = if n == 0 {
        1.0
    } else {
        let b = Binomial::new(0.5, n).expect("valid binomial");
        (2.0 * b.cdf(positive.min(negative) as u64)).min(1.0)
    };
    SignTest { positive, negative, ties, p_value }
}

/// Seeds `base_seed .. base_seed + n_seeds`. For each seed the corpus,
/// split and augmentation are all derived from that seed, and both arms
/// see the same corpus and the same augmentation draws.
pub fn compare_protocols(
    corpus_spec: &SyntheticSpec,
    plan: &AugmentPlan,
    split_proportions: &SplitSpec,
    base_seed: u64,
    n_seeds: usize,
) -> Result<InflationReport, PitfallError> {
    if n_seeds == 0 {
        return Err(PitfallError::BadSpec("n_seeds must be >= 1".into()));
    }
    corpus_spec.validate()?;
    let seeds: Vec<u64> = (0..n_seeds as u64).map(|i| base_seed.wrapping_add(i)).collect();
    let rows: Vec<PairedRow> = seeds
        .par_iter()
        .map(|&s| {
            let spec = SyntheticSpec { seed: seed::derive(s, "corpus"), ..corpus_spec.clone() };
            let corpus = gen_corpus(&spec)?;
            let plan = AugmentPlan { seed: seed::derive(s, "augment"), ..plan.clone() };
            let split_spec = SplitSpec { seed: s, ..*split_proportions };
            let flawed = run_protocol(&corpus, Protocol::FlawedPreSplit, &plan, &split_spec)?;
            let sound = run_protocol(&corpus, Protocol::SoundPostSplit, &plan, &split_spec)?;
            Ok(PairedRow {
                seed: s,
                flawed_accuracy: flawed.accuracy(),
                sound_accuracy: sound.accuracy(),
                delta: flawed.accuracy() - sound.accuracy(),
                flawed_leakage_rate: flawed.leakage.rate,
                sound_leakage_rate: sound.leakage.rate,
            })
        })
        .collect::<Result<_, PitfallError>>()?;
    let deltas: Vec<f64> = rows.iter().map(|r| r.delta).collect();
    let delta = DeltaSummary {
        mean: deltas.iter().sum::<f64>() / deltas.len() as f64,
        min: deltas.iter().copied().fold(f64::INFINITY, f64::min),
        max: deltas.iter().copied().fold(f64::NEG_INFINITY, f64::max),
    };
    Ok(InflationReport {
        schema: SIMULATE_SCHEMA.into(),
        corpus: corpus_spec.clone(),
        plan: plan.clone(),
        split: *split_proportions,
        sign_test: (rows.len() > 1).then(|| sign_test(&deltas)),
        rows,
        delta,
    })
}

impl InflationReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn to_text(&self) -> String {
        let mut out = String::from("seed        flawed_acc  sound_acc  delta    flawed_leak  sound_leak\n");
        for r in &self.rows {
            out += &format!(
                "{:<11} {:<11.4} {:<10.4} {:<+8.4} {:<12.4} {:.4}\n",
                r.seed, r.flawed_accuracy, r.sound_accuracy, r.delta, r.flawed_leakage_rate, r.sound_leakage_rate
            );
        }
        out += &format!("delta mean {:+.4}  min {:+.4}  max {:+.4}\n", self.delta.mean, self.delta.min, self.delta.max);
        if let Some(s) = &self.sign_test {
            out += &format!("sign test: {} positive, {} negative, {} tied, p = {:.4}\n", s.positive, s.negative, s.ties, s.p_value);
        }
        out
    }
}
