//! Generators of valid instances for every on-disk format.

use std::collections::{BTreeMap, BTreeSet};

use proptest::collection::{btree_map, btree_set, vec};
use proptest::prelude::*;
use rigorbench::attention::AttentionTensor;
use rigorbench::corpus::{DatasetManifest, ImageRecord};
use rigorbench::methodology::{
    Augmentation, AugmentationTiming, CrossValidation, MethodologyManifest, ReportedMetric, ResultsOn, Step,
    METHODOLOGY_SCHEMA,
};
use rigorbench::metrics::{PredictionRecord, PredictionSet};
use rigorbench::protocol::{FoldLog, RunConfig, RunLog, TestReportRef, RUNLOG_SCHEMA};
use rigorbench::split::{Assignment, ClassCounts, Partition, Proportions, SplitManifest};

fn partition() -> impl Strategy<Value = Partition> {
    prop_oneof![Just(Partition::Train), Just(Partition::Val), Just(Partition::Test)]
}

/// Printable ASCII including CSV and JSON metacharacters.
fn text(max: usize) -> impl Strategy<Value = String> {
    proptest::string::string_regex(&format!("[ -~]{{0,{max}}}")).unwrap()
}

fn nonblank(max: usize) -> impl Strategy<Value = String> {
    proptest::string::string_regex(&format!("[!-~][ -~]{{0,{max}}}")).unwrap()
}

fn finite() -> impl Strategy<Value = f64> {
    prop_oneof![-1e6..1e6f64, 0.0..1.0f64, Just(0.0), Just(1.0), Just(1e-300)]
}

pub fn dataset_manifest() -> impl Strategy<Value = DatasetManifest> {
    vec((text(10), nonblank(6), text(12), "[0-9a-f]{64}", any::<u64>(), 1u32..5000, 1u32..5000), 0..24).prop_map(
        |rows| {
            let records = rows
                .into_iter()
                .enumerate()
                .map(|(i, (id, label, path, byte_hash, phash, width, height))| ImageRecord {
                    id: format!("{i:03}{id}"),
                    path,
                    label,
                    byte_hash,
                    phash,
                    width,
                    height,
                })
                .collect();
            DatasetManifest::new(records).unwrap()
        },
    )
}

pub fn split_manifest() -> impl Strategy<Value = SplitManifest> {
    (
        any::<u64>(),
        (0.0..1.0f64, 0.0..1.0f64, 0.0..1.0f64),
        btree_map(text(10), partition(), 0..20),
        btree_map(nonblank(6), (0usize..500, 0usize..500, 0usize..500), 0..5),
        "[0-9a-f]{64}",
    )
        .prop_map(|(seed, (train, val, test), assignment, classes, digest)| SplitManifest {
            schema: "rigorbench_split_v1".into(),
            seed,
            proportions: Proportions { train, val, test },
            assignment: Assignment(assignment.into_iter().collect()),
            class_table: classes
                .into_iter()
                .map(|(k, (train, val, test))| (k, ClassCounts { train, val, test }))
                .collect(),
            source_manifest_digest: digest,
        })
}

pub fn prediction_set() -> impl Strategy<Value = PredictionSet> {
    btree_set("[a-z][a-z0-9_]{0,5}", 1..5).prop_flat_map(|labels: BTreeSet<String>| {
        let labels: Vec<String> = labels.into_iter().collect();
        let n = labels.len();
        let pick = proptest::sample::select(labels.clone());
        let row = (text(10), pick.clone(), pick, partition(), vec(0.0..=1.0f64, n));
        (Just(labels), vec(row, 0..20))
    })
    .prop_map(|(labels, rows)| PredictionSet {
        labels,
        records: rows
            .into_iter()
            .enumerate()
            .map(|(i, (id, true_label, predicted_label, split, probabilities))| PredictionRecord {
                image_id: format!("{i}{id}"),
                true_label,
                predicted_label,
                probabilities,
                split,
            })
            .collect(),
    })
}

pub fn attention_tensor() -> impl Strategy<Value = AttentionTensor> {
    prop_oneof![vec(1usize..6, 2), vec(1usize..6, 3)]
        .prop_flat_map(|dims| {
            let n = dims.iter().product::<usize>();
            (Just(dims), vec(any::<f32>(), n), text(12), nonblank(8))
        })
        .prop_map(|(dims, data, id, layer)| {
            let mut t = AttentionTensor::new(dims, data, &id).unwrap();
            t.layer = layer;
            t
        })
}

pub fn run_log() -> impl Strategy<Value = RunLog> {
    let fold = (vec(finite(), 1..16), any::<prop::sample::Index>(), 0.0..1e4f64);
    (
        proptest::option::of(any::<u64>()),
        1usize..10,
        1usize..30,
        1usize..5,
        text(8),
        btree_map(text(6), text(6), 0..4),
        vec(fold, 0..6),
        text(12),
        partition(),
        proptest::option::of("[0-9a-f]{64}"),
    )
        .prop_map(|(seed, k, max_epochs, patience, optimizer, hyperparameters, folds, path, partition, sha256)| RunLog {
            schema: RUNLOG_SCHEMA.into(),
            config: RunConfig { seed, k, max_epochs, patience, optimizer, hyperparameters },
            folds: folds
                .into_iter()
                .enumerate()
                .map(|(fold, (val_f1, best, secs))| FoldLog {
                    fold,
                    stop_epoch: val_f1.len(),
                    best_epoch: best.index(val_f1.len()) + 1,
                    val_f1,
                    wall_clock_seconds: secs,
                })
                .collect(),
            final_report: TestReportRef { path, partition, sha256 },
        })
}

fn step() -> impl Strategy<Value = Step> {
    (text(12), any::<bool>()).prop_map(|(name, specified)| Step { name, specified })
}

pub fn methodology_manifest() -> impl Strategy<Value = MethodologyManifest> {
    let timing = prop_oneof![
        Just(AugmentationTiming::PreSplit),
        Just(AugmentationTiming::PostSplit),
        Just(AugmentationTiming::Unspecified)
    ];
    let results_on = prop_oneof![Just(ResultsOn::Val), Just(ResultsOn::Test), Just(ResultsOn::Unspecified)];
    let metrics = btree_set(proptest::sample::select(ReportedMetric::ALL.to_vec()), 0..6);
    (
        nonblank(10),
        vec(text(10), 0..3),
        vec(step(), 0..4),
        proptest::option::of((vec(step(), 0..4), timing)),
        text(10),
        proptest::option::of((proptest::option::of(2u32..20), proptest::option::of(text(10)))),
        vec(text(8), 0..3),
        results_on,
        metrics.prop_flat_map(|m: BTreeSet<ReportedMetric>| {
            let keys: Vec<ReportedMetric> = m.iter().copied().collect();
            let values = vec(proptest::option::of(text(6)), keys.len());
            (Just(m), Just(keys), values)
        }),
    )
        .prop_map(|(study_id, datasets, wrangling, aug, best_model, cv, xai, results_on, (metrics_reported, keys, values))| {
            let metric_values: BTreeMap<ReportedMetric, String> =
                keys.into_iter().zip(values).filter_map(|(k, v)| v.map(|v| (k, v))).collect();
            MethodologyManifest {
                schema: METHODOLOGY_SCHEMA.into(),
                study_id,
                datasets,
                wrangling,
                augmentation: aug.map(|(techniques, timing)| Augmentation { techniques, timing }),
                best_model,
                cross_validation: cv.map(|(k, note)| CrossValidation { k, note }),
                xai,
                results_on,
                metrics_reported,
                metric_values,
            }
        })
}
