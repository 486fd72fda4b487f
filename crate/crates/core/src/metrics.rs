//! Confusion matrices, per-class and macro-averaged metrics, cross-fold
//! aggregates and bootstrap confidence intervals.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::seed;
use crate::split::Partition;

pub const METRICS_SCHEMA: &str = "rigorbench_metrics_v1";
const PROB_SUM_TOLERANCE: f64 = 1e-6;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum MetricsError {
    #[error("label {0:?} is not in the label set")]
    UnknownLabel(String),
    #[error("need at least 2 fold reports, got {0}")]
    TooFewFolds(usize),
    #[error("fold reports disagree on labels")]
    LabelMismatch,
    #[error("no labels")]
    NoLabels,
    #[error("bootstrap needs B >= 100 (got {0})")]
    TooFewReplicates(usize),
    #[error("predictions format error: {0}")]
    Format(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub image_id: String,
    pub true_label: String,
    pub predicted_label: String,
    /// Aligned with [`PredictionSet::labels`].
    pub probabilities: Vec<f64>,
    pub split: Partition,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum PredictionIssue {
    ProbabilitiesDoNotSumToOne { image_id: String, sum_millionths: i64 },
    PredictionNotArgmax { image_id: String, argmax: String },
    /// Several labels share the maximum probability; the lexicographically
    /// first is the canonical prediction.
    ArgmaxTie { image_id: String, labels: Vec<String> },
    ProbabilityOutOfRange { image_id: String, label: String },
}

/// Predictions plus the ordered label set their probability columns use.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionSet {
    pub labels: Vec<String>,
    pub records: Vec<PredictionRecord>,
}

impl PredictionSet {
    /// Invariant checks: probabilities in [0,1] summing to 1 within 1e-6 and
    /// prediction equal to argmax (ties resolved lexicographically, flagged).
    pub fn validate(&self) -> Vec<PredictionIssue> {
        let mut issues = Vec::new();
        for r in &self.records {
            if r.probabilities.is_empty() {
                continue;
            }
            let sum: f64 = r.probabilities.iter().sum();
            if (sum - 1.0).abs() > PROB_SUM_TOLERANCE {
                issues.push(PredictionIssue::ProbabilitiesDoNotSumToOne {
                    image_id: r.image_id.clone(),
                    sum_millionths: (sum * 1e6).round() as i64,
                });
            }
            for (l, p) in self.labels.iter().zip(&r.probabilities) {
                if !(0.0..=1.0).contains(p) {
                    issues.push(PredictionIssue::ProbabilityOutOfRange { image_id: r.image_id.clone(), label: l.clone() });
                }
            }
            let max = r.probabilities.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut tied: Vec<&String> =
                self.labels.iter().zip(&r.probabilities).filter(|(_, p)| **p == max).map(|(l, _)| l).collect();
            tied.sort();
            if tied.len() > 1 {
                issues.push(PredictionIssue::ArgmaxTie {
                    image_id: r.image_id.clone(),
                    labels: tied.iter().map(|s| s.to_string()).collect(),
                });
            }
            if let Some(first) = tied.first() {
                if **first != r.predicted_label {
                    issues.push(PredictionIssue::PredictionNotArgmax {
                        image_id: r.image_id.clone(),
                        argmax: first.to_string(),
                    });
                }
            }
        }
        issues
    }

    pub fn header(&self) -> Vec<String> {
        let mut h: Vec<String> =
            ["image_id", "true_label", "predicted_label", "split"].iter().map(|s| s.to_string()).collect();
        h.extend(self.labels.iter().map(|l| format!("p_{l}")));
        h
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
        w.write_record(self.header()).expect("in-memory csv");
        for r in &self.records {
            let mut row = vec![r.image_id.clone(), r.true_label.clone(), r.predicted_label.clone(), r.split.to_string()];
            row.extend(r.probabilities.iter().map(|p| format!("{p}")));
            w.write_record(&row).expect("in-memory csv");
        }
        String::from_utf8(w.into_inner().expect("csv flush")).expect("utf-8")
    }

    pub fn from_csv(text: &str) -> Result<Self, MetricsError> {
        let mut rdr = csv::ReaderBuilder::new().from_reader(text.as_bytes());
        let header = rdr.headers().map_err(|e| MetricsError::Format(e.to_string()))?.clone();
        let fixed = ["image_id", "true_label", "predicted_label", "split"];
        if header.len() < 4 || header.iter().take(4).ne(fixed.iter().copied()) {
            return Err(MetricsError::Format(format!("header must start with {}", fixed.join(","))));
        }
        let labels: Vec<String> = header
            .iter()
            .skip(4)
            .map(|h| h.strip_prefix("p_").map(str::to_string).ok_or_else(|| MetricsError::Format(format!("bad column {h:?}"))))
            .collect::<Result<_, _>>()?;
        let mut records = Vec::new();
        for (i, row) in rdr.records().enumerate() {
            let row = row.map_err(|e| MetricsError::Format(format!("row {}: {e}", i + 2)))?;
            let split = match &row[3] {
                "val" => Partition::Val,
                "test" => Partition::Test,
                "train" => Partition::Train,
                other => return Err(MetricsError::Format(format!("row {}: bad split {other:?}", i + 2))),
            };
            let probabilities = row
                .iter()
                .skip(4)
                .map(|v| v.parse::<f64>().map_err(|e| MetricsError::Format(format!("row {}: {e}", i + 2))))
                .collect::<Result<Vec<_>, _>>()?;
            records.push(PredictionRecord {
                image_id: row[0].to_string(),
                true_label: row[1].to_string(),
                predicted_label: row[2].to_string(),
                probabilities,
                split,
            });
        }
        Ok(PredictionSet { labels, records })
    }

    pub fn probability(&self, record: &PredictionRecord, label: &str) -> Option<f64> {
        self.labels.iter().position(|l| l == label).and_then(|i| record.probabilities.get(i).copied())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub labels: Vec<String>,
    /// Rows are true labels, columns predicted labels.
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn support(&self, class: usize) -> u64 {
        self.counts[class].iter().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.labels.len()).map(|i| self.counts[i][i]).sum()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("true\\predicted");
        for l in &self.labels {
            out.push(',');
            out.push_str(l);
        }
        out.push('\n');
        for (l, row) in self.labels.iter().zip(&self.counts) {
            out.push_str(l);
            for c in row {
                let _ = write!(out, ",{c}");
            }
            out.push('\n');
        }
        out
    }

    /// Right-aligned text table.
    pub fn to_text(&self) -> String {
        let label_w = self.labels.iter().map(|l| l.len()).max().unwrap_or(0).max(4);
        let cell_w = self
            .counts
            .iter()
            .flatten()
            .map(|c| c.to_string().len())
            .chain(self.labels.iter().map(|l| l.len()))
            .max()
            .unwrap_or(1);
        let mut out = format!("{:>label_w$}", "");
        for l in &self.labels {
            let _ = write!(out, " {l:>cell_w$}");
        }
        out.push('\n');
        for (l, row) in self.labels.iter().zip(&self.counts) {
            let _ = write!(out, "{l:>label_w$}");
            for c in row {
                let _ = write!(out, " {c:>cell_w$}");
            }
            out.push('\n');
        }
        out
    }
}

pub fn build_confusion(predictions: &[PredictionRecord], labels: &[String]) -> Result<ConfusionMatrix, MetricsError> {
    let index: HashMap<&str, usize> = labels.iter().enumerate().map(|(i, l)| (l.as_str(), i)).collect();
    let mut counts = vec![vec![0u64; labels.len()]; labels.len()];
    for r in predictions {
        let t = *index.get(r.true_label.as_str()).ok_or_else(|| MetricsError::UnknownLabel(r.true_label.clone()))?;
        let p = *index
            .get(r.predicted_label.as_str())
            .ok_or_else(|| MetricsError::UnknownLabel(r.predicted_label.clone()))?;
        counts[t][p] += 1;
    }
    Ok(ConfusionMatrix { labels: labels.to_vec(), counts })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ZeroDivision {
    Precision,
    Recall,
    F1,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub label: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub zero_division: Vec<ZeroDivision>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MacroMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub schema: String,
    pub per_class: Vec<ClassMetrics>,
    #[serde(rename = "macro")]
    pub macro_avg: MacroMetrics,
    pub confusion: ConfusionMatrix,
}

impl MetricReport {
    pub fn labels(&self) -> Vec<&str> {
        self.per_class.iter().map(|c| c.label.as_str()).collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, MetricsError> {
        let r: MetricReport = serde_json::from_str(text).map_err(|e| MetricsError::Format(e.to_string()))?;
        if r.schema != METRICS_SCHEMA {
            return Err(MetricsError::Format(format!("unexpected schema {:?}", r.schema)));
        }
        Ok(r)
    }

    pub fn value(&self, metric: MetricName) -> f64 {
        match metric {
            MetricName::Accuracy => self.macro_avg.accuracy,
            MetricName::MacroPrecision => self.macro_avg.precision,
            MetricName::MacroRecall => self.macro_avg.recall,
            MetricName::MacroF1 => self.macro_avg.f1,
        }
    }
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

/// Precision, recall and F1 per class; zero denominators give 0 plus a flag.
pub fn per_class_metrics(cm: &ConfusionMatrix) -> Vec<ClassMetrics> {
    let n = cm.labels.len();
    (0..n)
        .map(|c| {
            let tp = cm.counts[c][c];
            let predicted: u64 = (0..n).map(|t| cm.counts[t][c]).sum();
            let support = cm.support(c);
            let mut flags = Vec::new();
            let precision = ratio(tp, predicted).unwrap_or_else(|| {
                flags.push(ZeroDivision::Precision);
                0.0
            });
            let recall = ratio(tp, support).unwrap_or_else(|| {
                flags.push(ZeroDivision::Recall);
                0.0
            });
            let f1 = if precision + recall > 0.0 {
                2.0 * precision * recall / (precision + recall)
            } else {
                flags.push(ZeroDivision::F1);
                0.0
            };
            ClassMetrics { label: cm.labels[c].clone(), precision, recall, f1, support, zero_division: flags }
        })
        .collect()
}

/// Unweighted means over all labels; macro F1 is the mean of per-class F1s.
pub fn macro_metrics(per_class: &[ClassMetrics], cm: &ConfusionMatrix) -> Result<MacroMetrics, MetricsError> {
    if per_class.is_empty() {
        return Err(MetricsError::NoLabels);
    }
    let n = per_class.len() as f64;
    let mean = |f: fn(&ClassMetrics) -> f64| per_class.iter().map(f).sum::<f64>() / n;
    Ok(MacroMetrics {
        precision: mean(|c| c.precision),
        recall: mean(|c| c.recall),
        f1: mean(|c| c.f1),
        accuracy: ratio(cm.trace(), cm.total()).unwrap_or(0.0),
    })
}

pub fn report_from_confusion(cm: ConfusionMatrix) -> Result<MetricReport, MetricsError> {
    let per_class = per_class_metrics(&cm);
    let macro_avg = macro_metrics(&per_class, &cm)?;
    Ok(MetricReport { schema: METRICS_SCHEMA.to_string(), per_class, macro_avg, confusion: cm })
}

pub fn evaluate(predictions: &[PredictionRecord], labels: &[String]) -> Result<MetricReport, MetricsError> {
    report_from_confusion(build_confusion(predictions, labels)?)
}

/// Label order: as given, else lexicographic over every label seen.
pub fn resolve_labels(given: Option<&[String]>, predictions: &[PredictionRecord]) -> Vec<String> {
    if let Some(g) = given.filter(|g| !g.is_empty()) {
        return g.to_vec();
    }
    let mut all: Vec<String> =
        predictions.iter().flat_map(|r| [r.true_label.clone(), r.predicted_label.clone()]).collect();
    all.sort();
    all.dedup();
    all
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricName {
    Accuracy,
    MacroPrecision,
    MacroRecall,
    MacroF1,
}

impl MetricName {
    pub const ALL: [MetricName; 4] =
        [MetricName::MacroPrecision, MetricName::MacroRecall, MetricName::MacroF1, MetricName::Accuracy];

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "accuracy" => Some(MetricName::Accuracy),
            "macro_precision" | "precision" => Some(MetricName::MacroPrecision),
            "macro_recall" | "recall" => Some(MetricName::MacroRecall),
            "macro_f1" | "f1" => Some(MetricName::MacroF1),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            MetricName::Accuracy => "accuracy",
            MetricName::MacroPrecision => "macro_precision",
            MetricName::MacroRecall => "macro_recall",
            MetricName::MacroF1 => "macro_f1",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryStats {
    pub mean: f64,
    /// Sample standard deviation (n - 1 denominator).
    pub std: f64,
    pub min: f64,
    pub max: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

impl SummaryStats {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = if values.len() > 1 { values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
        let std = var.sqrt();
        let half = if values.len() > 1 {
            let t = StudentsT::new(0.0, 1.0, n - 1.0).expect("df > 0").inverse_cdf(0.975);
            t * std / n.sqrt()
        } else {
            0.0
        };
        SummaryStats {
            mean,
            std,
            min: values.iter().copied().fold(f64::INFINITY, f64::min),
            max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            ci_low: mean - half,
            ci_high: mean + half,
        }
    }

    /// `0.8505 ± 0.0082`
    pub fn mean_pm_std(&self) -> String {
        format!("{:.4} ± {:.4}", self.mean, self.std)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldAggregate {
    pub folds: Vec<MetricReport>,
    pub stats: BTreeMap<MetricName, SummaryStats>,
}

pub fn aggregate_folds(reports: &[MetricReport]) -> Result<FoldAggregate, MetricsError> {
    if reports.len() < 2 {
        return Err(MetricsError::TooFewFolds(reports.len()));
    }
    let labels = reports[0].labels();
    if reports.iter().any(|r| r.labels() != labels) {
        return Err(MetricsError::LabelMismatch);
    }
    let stats = MetricName::ALL
        .iter()
        .map(|&m| {
            let vals: Vec<f64> = reports.iter().map(|r| r.value(m)).collect();
            (m, SummaryStats::of(&vals))
        })
        .collect();
    Ok(FoldAggregate { folds: reports.to_vec(), stats })
}

/// Linear-interpolation percentile of sorted data (`q` in [0, 1]).
fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Percentile (2.5 / 97.5) bootstrap interval over `replicates` resamples
/// with replacement. Each replicate has its own seeded stream, so the
/// result does not depend on thread count.
pub fn bootstrap_ci(
    predictions: &[PredictionRecord],
    labels: &[String],
    metric: MetricName,
    replicates: usize,
    seed: u64,
) -> Result<(f64, f64), MetricsError> {
    if replicates < 100 {
        return Err(MetricsError::TooFewReplicates(replicates));
    }
    let n = predictions.len();
    if n == 0 {
        return Ok((0.0, 0.0));
    }
    let index: HashMap<&str, usize> = labels.iter().enumerate().map(|(i, l)| (l.as_str(), i)).collect();
    let pairs: Vec<(usize, usize)> = predictions
        .iter()
        .map(|r| {
            let t = index.get(r.true_label.as_str()).ok_or_else(|| MetricsError::UnknownLabel(r.true_label.clone()))?;
            let p = index
                .get(r.predicted_label.as_str())
                .ok_or_else(|| MetricsError::UnknownLabel(r.predicted_label.clone()))?;
            Ok((*t, *p))
        })
        .collect::<Result<_, MetricsError>>()?;
    let k = labels.len();
    let mut values: Vec<f64> = (0..replicates)
        .into_par_iter()
        .map(|b| {
            let mut rng = seed::rng(seed::derive_indexed(seed, "bootstrap", b as u64));
            let mut counts = vec![vec![0u64; k]; k];
            for _ in 0..n {
                let (t, p) = pairs[rng.random_range(0..n)];
                counts[t][p] += 1;
            }
            let cm = ConfusionMatrix { labels: labels.to_vec(), counts };
            let pc = per_class_metrics(&cm);
            let m = macro_metrics(&pc, &cm).expect("labels non-empty");
            match metric {
                MetricName::Accuracy => m.accuracy,
                MetricName::MacroPrecision => m.precision,
                MetricName::MacroRecall => m.recall,
                MetricName::MacroF1 => m.f1,
            }
        })
        .collect();
    values.sort_by(f64::total_cmp);
    Ok((percentile(&values, 0.025), percentile(&values, 0.975)))
}
