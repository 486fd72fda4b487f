//! Training-protocol conformance: early-stopping replay and run-log checks.

use serde::{Deserialize, Serialize};

use crate::finding::{Finding, Severity};
use crate::split::Partition;

pub const RUNLOG_SCHEMA: &str = "rigorbench_runlog_v1";
pub const MIN_K: usize = 5;

pub const EARLY_STOP_MISMATCH: &str = "EARLY_STOP_MISMATCH";
pub const BEST_EPOCH_MISMATCH: &str = "BEST_EPOCH_MISMATCH";
pub const EPOCH_CAP_EXCEEDED: &str = "EPOCH_CAP_EXCEEDED";
pub const MISSING_SEED: &str = "MISSING_SEED";
pub const K_TOO_SMALL: &str = "K_TOO_SMALL";
pub const FOLD_COUNT_MISMATCH: &str = "FOLD_COUNT_MISMATCH";
pub const RESULTS_ON_VALIDATION: &str = "RESULTS_ON_VALIDATION";

#[derive(Debug, thiserror::Error)]
pub enum ProtocolError {
    #[error("malformed run log: {0}")]
    MalformedLog(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EarlyStop {
    /// 1-indexed.
    pub stop_epoch: usize,
    /// 1-indexed.
    pub best_epoch: usize,
}

/// Replays patience-based early stopping. Only a strictly greater value
/// counts as improvement. Training stops at the first epoch where the
/// number of epochs since the best reaches `patience`, otherwise at
/// `max_epochs` (or the end of the series if shorter).
///
/// Panics when `patience` is zero or the series is empty.
pub fn check_early_stopping(val_f1: &[f64], patience: usize, max_epochs: usize) -> EarlyStop {
    assert!(patience >= 1, "patience must be >= 1");
    assert!(!val_f1.is_empty(), "empty validation series");
    let horizon = max_epochs.min(val_f1.len()).max(1);
    let mut best = val_f1[0];
    let mut best_epoch = 1;
    for (i, &v) in val_f1.iter().enumerate().take(horizon).skip(1) {
        let epoch = i + 1;
        if v > best {
            best = v;
            best_epoch = epoch;
        } else if epoch - best_epoch >= patience {
            return EarlyStop { stop_epoch: epoch, best_epoch };
        }
    }
    EarlyStop { stop_epoch: horizon, best_epoch }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub k: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub optimizer: String,
    /// Echoed, not interpreted.
    #[serde(default)]
    pub hyperparameters: std::collections::BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldLog {
    pub fold: usize,
    pub val_f1: Vec<f64>,
    pub stop_epoch: usize,
    pub best_epoch: usize,
    pub wall_clock_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestReportRef {
    pub path: String,
    pub partition: Partition,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sha256: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunLog {
    pub schema: String,
    pub config: RunConfig,
    pub folds: Vec<FoldLog>,
    pub final_report: TestReportRef,
}

impl RunLog {
    pub fn from_json(text: &str) -> Result<Self, ProtocolError> {
        let log: RunLog = serde_json::from_str(text).map_err(|e| ProtocolError::MalformedLog(e.to_string()))?;
        log.check_structure()?;
        Ok(log)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("run log serializes")
    }

    /// Structural invariants; anything violating these is unparseable
    /// rather than a protocol finding.
    fn check_structure(&self) -> Result<(), ProtocolError> {
        let bad = |m: String| Err(ProtocolError::MalformedLog(m));
        if self.schema != RUNLOG_SCHEMA {
            return bad(format!("schema {:?}, expected {RUNLOG_SCHEMA:?}", self.schema));
        }
        if self.config.patience == 0 || self.config.max_epochs == 0 {
            return bad("patience and max_epochs must be >= 1".into());
        }
        for f in &self.folds {
            let at = format!("folds[{}]", f.fold);
            if f.val_f1.is_empty() {
                return bad(format!("{at}: empty val_f1"));
            }
            if f.val_f1.len() != f.stop_epoch {
                return bad(format!("{at}: {} epochs logged but stop_epoch {}", f.val_f1.len(), f.stop_epoch));
            }
            if f.best_epoch == 0 || f.best_epoch > f.stop_epoch {
                return bad(format!("{at}: best_epoch {} outside 1..={}", f.best_epoch, f.stop_epoch));
            }
            if f.val_f1.iter().any(|v| !v.is_finite()) {
                return bad(format!("{at}: non-finite val_f1"));
            }
        }
        Ok(())
    }
}

pub fn validate_runlog(log: &RunLog) -> Result<Vec<Finding>, ProtocolError> {
    log.check_structure()?;
    let cfg = &log.config;
    let mut out = Vec::new();
    if cfg.seed.is_none() {
        out.push(Finding::new(MISSING_SEED, Severity::Warning, "config.seed", "random seed is not recorded"));
    }
    if cfg.k < MIN_K {
        out.push(Finding::new(K_TOO_SMALL, Severity::Warning, "config.k", format!("k = {} is below the minimum of {MIN_K}", cfg.k)));
    }
    if log.folds.len() != cfg.k {
        out.push(Finding::new(
            FOLD_COUNT_MISMATCH,
            Severity::Warning,
            "folds",
            format!("{} folds logged for k = {}", log.folds.len(), cfg.k),
        ));
    }
    for (i, f) in log.folds.iter().enumerate() {
        let at = |field: &str| format!("folds[{i}].{field}");
        if f.stop_epoch > cfg.max_epochs {
            out.push(Finding::new(
                EPOCH_CAP_EXCEEDED,
                Severity::Error,
                at("stop_epoch"),
                format!("stopped at epoch {} beyond the cap of {}", f.stop_epoch, cfg.max_epochs),
            ));
        }
        let expected = check_early_stopping(&f.val_f1, cfg.patience, cfg.max_epochs);
        let triggered = expected.stop_epoch - expected.best_epoch >= cfg.patience;
        if expected.stop_epoch != f.stop_epoch {
            out.push(Finding::new(
                EARLY_STOP_MISMATCH,
                Severity::Error,
                at("stop_epoch"),
                format!("logged stop epoch {} but the rule stops at {}", f.stop_epoch, expected.stop_epoch),
            ));
        } else if !triggered && f.stop_epoch < cfg.max_epochs {
            out.push(Finding::new(
                EARLY_STOP_MISMATCH,
                Severity::Error,
                at("stop_epoch"),
                format!(
                    "stopped at epoch {} although patience {} was not exhausted and the cap is {}",
                    f.stop_epoch, cfg.patience, cfg.max_epochs
                ),
            ));
        }
        if expected.best_epoch != f.best_epoch {
            out.push(Finding::new(
                BEST_EPOCH_MISMATCH,
                Severity::Error,
                at("best_epoch"),
                format!("logged best epoch {} but the series peaks at {}", f.best_epoch, expected.best_epoch),
            ));
        }
    }
    if log.final_report.partition != Partition::Test {
        out.push(Finding::new(
            RESULTS_ON_VALIDATION,
            Severity::Error,
            "final_report.partition",
            format!("final results computed on the {} partition instead of test", log.final_report.partition.as_str()),
        ));
    }
    Ok(out)
}
