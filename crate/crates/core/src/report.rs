//! Study card: one document gathering per-fold results, aggregates,
//! per-class test metrics, correlation results and lint findings.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::finding::Finding;
use crate::metrics::{self, FoldAggregate, MetricName, MetricReport, SummaryStats};
use crate::stats::CorrelationResult;

pub const STUDY_CARD_SCHEMA: &str = "rigorbench_study_card_v1";

#[derive(Debug, thiserror::Error)]
pub enum ReportError {
    #[error("missing artifact: {0}")]
    MissingArtifact(PathBuf),
    #[error("unreadable artifact {path}: {reason}")]
    BadArtifact { path: PathBuf, reason: String },
    #[error("nothing to report: no fold or test metrics given")]
    Empty,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldRow {
    pub name: String,
    pub accuracy: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
}

impl FoldRow {
    fn of(name: &str, r: &MetricReport) -> Self {
        Self {
            name: name.into(),
            accuracy: r.value(MetricName::Accuracy),
            macro_precision: r.value(MetricName::MacroPrecision),
            macro_recall: r.value(MetricName::MacroRecall),
            macro_f1: r.value(MetricName::MacroF1),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LintSummary {
    pub study_id: String,
    pub findings: Vec<Finding>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyCard {
    pub schema: String,
    pub seed: u64,
    /// Fold rows followed by the test row, if any.
    pub rows: Vec<FoldRow>,
    /// Present with two or more folds.
    pub aggregate: Option<Vec<(MetricName, SummaryStats)>>,
    pub test: Option<MetricReport>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub correlations: Vec<CorrelationResult>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub lint: Vec<LintSummary>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub runlog_findings: Vec<Finding>,
}

#[derive(Debug, Clone, Default)]
pub struct StudyInputs {
    pub folds: Vec<(String, MetricReport)>,
    pub test: Option<MetricReport>,
    pub correlations: Vec<CorrelationResult>,
    pub lint: Vec<LintSummary>,
    pub runlog_findings: Vec<Finding>,
}

pub fn load_metric_report(path: &Path) -> Result<MetricReport, ReportError> {
    if !path.exists() {
        return Err(ReportError::MissingArtifact(path.to_path_buf()));
    }
    let text = std::fs::read_to_string(path)
        .map_err(|e| ReportError::BadArtifact { path: path.to_path_buf(), reason: e.to_string() })?;
    MetricReport::from_json(&text).map_err(|e| ReportError::BadArtifact { path: path.to_path_buf(), reason: e.to_string() })
}

pub fn build_study_card(inputs: StudyInputs, seed: u64) -> Result<StudyCard, ReportError> {
    if inputs.folds.is_empty() && inputs.test.is_none() {
        return Err(ReportError::Empty);
    }
    let mut rows: Vec<FoldRow> = inputs.folds.iter().map(|(n, r)| FoldRow::of(n, r)).collect();
    if let Some(t) = &inputs.test {
        rows.push(FoldRow::of("test", t));
    }
    let reports: Vec<MetricReport> = inputs.folds.iter().map(|(_, r)| r.clone()).collect();
    let aggregate = match metrics::aggregate_folds(&reports) {
        Ok(FoldAggregate { stats, .. }) => Some(stats.into_iter().collect()),
        Err(_) => None,
    };
    Ok(StudyCard {
        schema: STUDY_CARD_SCHEMA.into(),
        seed,
        rows,
        aggregate,
        test: inputs.test,
        correlations: inputs.correlations,
        lint: inputs.lint,
        runlog_findings: inputs.runlog_findings,
    })
}

impl StudyCard {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("study card serializes")
    }

    /// Markdown rendering of the same fields as [`StudyCard::to_json`].
    pub fn to_markdown(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# Study card\n\nseed: {}\n", self.seed);
        out += "## Results per fold\n\n| fold | accuracy | macro precision | macro recall | macro F1 |\n|---|---|---|---|---|\n";
        for r in &self.rows {
            let _ = writeln!(
                out,
                "| {} | {:.4} | {:.4} | {:.4} | {:.4} |",
                r.name, r.accuracy, r.macro_precision, r.macro_recall, r.macro_f1
            );
        }
        if let Some(agg) = &self.aggregate {
            out += "\n## Aggregate over folds (mean ± sample std, 95% t interval)\n\n";
            for (m, s) in agg {
                let _ = writeln!(out, "- {}: {} [{:.4}, {:.4}]", m.as_str(), s.mean_pm_std(), s.ci_low, s.ci_high);
            }
        }
        if let Some(t) = &self.test {
            out += "\n## Per-class test metrics\n\n| class | precision | recall | F1 | support |\n|---|---|---|---|---|\n";
            for c in &t.per_class {
                let _ = writeln!(out, "| {} | {:.4} | {:.4} | {:.4} | {} |", c.label, c.precision, c.recall, c.f1, c.support);
            }
        }
        if !self.correlations.is_empty() {
            out += "\n## Statistics\n\n";
            for c in &self.correlations {
                let name = match c.method {
                    crate::stats::CorrelationMethod::Pearson => "Pearson r",
                    crate::stats::CorrelationMethod::Spearman => "Spearman rho",
                };
                let _ = writeln!(out, "- {name} = {:.3}, p = {:.3} (n = {})", c.coefficient, c.p_value, c.n);
            }
        }
        if !self.lint.is_empty() || !self.runlog_findings.is_empty() {
            out += "\n## Methodology findings\n\n";
            for l in &self.lint {
                if l.findings.is_empty() {
                    let _ = writeln!(out, "- {}: no findings", l.study_id);
                }
                for f in &l.findings {
                    let _ = writeln!(out, "- {}: {f}", l.study_id);
                }
            }
            for f in &self.runlog_findings {
                let _ = writeln!(out, "- run log: {f}");
            }
        }
        out
    }
}
