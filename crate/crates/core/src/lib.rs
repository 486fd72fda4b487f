//! Dataset hygiene and evaluation-rigor toolkit for image-classification studies.
//!
//! The crate is organised by pipeline stage:
//!
//! * [`corpus`]: content and perceptual hashing, duplicate grouping, exclusion ledgers.
//! * [`split`]: stratified holdout splits and k-fold plans.
//! * [`leakage`]: cross-split duplicate and dihedral-transform leak scans.
//! * [`augment`]: seeded, train-only image augmentation.
//! * [`metrics`]: confusion matrices, macro metrics, fold aggregates, bootstrap intervals.
//! * [`stats`]: Pearson / Spearman correlation with Student-t p-values.
//! * [`attention`]: attention-map post-processing and triptych rendering.
//! * [`protocol`]: early-stopping and run-log conformance checks.
//! * [`methodology`]: study disclosure manifests and their linter.
//! * [`pitfall`]: augment-before-split inflation simulator.
//! * [`runlog`]: append-only experiment record store.
//! * [`report`]: study-card rendering from the artifacts above.

pub mod attention;
pub mod augment;
pub mod corpus;
pub mod finding;
pub mod hamming;
pub mod leakage;
pub mod methodology;
pub mod metrics;
pub mod pitfall;
pub mod protocol;
pub mod raster;
pub mod report;
pub mod runlog;
pub mod seed;
pub mod split;
pub mod stats;

mod io_util;

pub use finding::{Finding, Severity};

/// Default seed used across every stochastic operation.
pub const DEFAULT_SEED: u64 = 42;
