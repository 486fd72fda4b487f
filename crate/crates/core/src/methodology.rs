//! Study disclosure manifests and the methodology linter.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Deserializer, Serialize};

use crate::finding::{Finding, Severity};

pub const METHODOLOGY_SCHEMA: &str = "rigorbench_methodology_v1";
pub const NA: &str = "N/A";

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
#[error("schema error at {path}: {message}")]
pub struct SchemaError {
    pub path: String,
    pub message: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AugmentationTiming {
    PreSplit,
    PostSplit,
    Unspecified,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResultsOn {
    Val,
    Test,
    Unspecified,
}

impl ResultsOn {
    pub fn as_str(self) -> &'static str {
        match self {
            ResultsOn::Val => "val",
            ResultsOn::Test => "test",
            ResultsOn::Unspecified => "unspecified",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportedMetric {
    Accuracy,
    F1,
    Precision,
    Recall,
    Specificity,
    Auc,
}

impl ReportedMetric {
    pub const ALL: [ReportedMetric; 6] = [
        ReportedMetric::Accuracy,
        ReportedMetric::F1,
        ReportedMetric::Precision,
        ReportedMetric::Recall,
        ReportedMetric::Specificity,
        ReportedMetric::Auc,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ReportedMetric::Accuracy => "accuracy",
            ReportedMetric::F1 => "f1",
            ReportedMetric::Precision => "precision",
            ReportedMetric::Recall => "recall",
            ReportedMetric::Specificity => "specificity",
            ReportedMetric::Auc => "auc",
        }
    }
}

/// A wrangling or augmentation step. A bare string in the input is a
/// fully specified step.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Step {
    pub name: String,
    pub specified: bool,
}

impl Step {
    pub fn new(name: &str) -> Self {
        Self { name: name.into(), specified: true }
    }

    pub fn unspecified(name: &str) -> Self {
        Self { name: name.into(), specified: false }
    }
}

impl<'de> Deserialize<'de> for Step {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Name(String),
            Full {
                name: String,
                #[serde(default = "yes")]
                specified: bool,
            },
        }
        fn yes() -> bool {
            true
        }
        Ok(match Raw::deserialize(d)? {
            Raw::Name(name) => Step { name, specified: true },
            Raw::Full { name, specified } => Step { name, specified },
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Augmentation {
    pub techniques: Vec<Step>,
    pub timing: AugmentationTiming,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CrossValidation {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MethodologyManifest {
    pub schema: String,
    pub study_id: String,
    pub datasets: Vec<String>,
    #[serde(default)]
    pub wrangling: Vec<Step>,
    /// Absent when the study reports no augmentation.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub augmentation: Option<Augmentation>,
    pub best_model: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cross_validation: Option<CrossValidation>,
    #[serde(default)]
    pub xai: Vec<String>,
    pub results_on: ResultsOn,
    pub metrics_reported: BTreeSet<ReportedMetric>,
    /// Reported values as printed, keyed by metric.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub metric_values: BTreeMap<ReportedMetric, String>,
}

impl MethodologyManifest {
    pub fn parse(text: &str) -> Result<Self, SchemaError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let m: MethodologyManifest = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            SchemaError { path: if path == "." { "$".into() } else { path }, message: e.into_inner().to_string() }
        })?;
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<(), SchemaError> {
        let err = |path: &str, message: &str| Err(SchemaError { path: path.into(), message: message.into() });
        if self.schema != METHODOLOGY_SCHEMA {
            return err("schema", &format!("expected {METHODOLOGY_SCHEMA:?}"));
        }
        if self.study_id.trim().is_empty() {
            return err("study_id", "must be non-empty");
        }
        if let Some(k) = self.cross_validation.as_ref().and_then(|cv| cv.k) {
            if k < 2 {
                return err("cross_validation.k", "must be >= 2");
            }
        }
        for m in self.metric_values.keys() {
            if !self.metrics_reported.contains(m) {
                return err(&format!("metric_values.{}", m.as_str()), "value given for a metric not in metrics_reported");
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Rule {
    pub id: &'static str,
    pub default_severity: Severity,
    /// Manifest field the rule inspects.
    pub field: &'static str,
    /// The disclosure failure the rule encodes.
    pub anchor: &'static str,
}

pub const RULES: [Rule; 6] = [
    Rule {
        id: "R1",
        default_severity: Severity::Warning,
        field: "results_on",
        anchor: "headline results computed on validation data are optimistically biased",
    },
    Rule {
        id: "R2",
        default_severity: Severity::Error,
        field: "augmentation.timing",
        anchor: "augmenting before the split lets copies of one image reach both train and evaluation data",
    },
    Rule {
        id: "R3",
        default_severity: Severity::Warning,
        field: "metrics_reported",
        anchor: "accuracy alone hides per-class failure on imbalanced data",
    },
    Rule {
        id: "R4",
        default_severity: Severity::Info,
        field: "cross_validation",
        anchor: "a single split gives no estimate of variance across partitions",
    },
    Rule {
        id: "R5",
        default_severity: Severity::Warning,
        field: "wrangling",
        anchor: "preprocessing or augmentation left unspecified or unclear cannot be reproduced",
    },
    Rule {
        id: "R6",
        default_severity: Severity::Info,
        field: "xai",
        anchor: "no explainability analysis of what the model attends to",
    },
];

pub fn rule(id: &str) -> Option<&'static Rule> {
    RULES.iter().find(|r| r.id == id)
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum LintConfigError {
    #[error("unknown rule {0:?}")]
    UnknownRule(String),
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LintConfig {
    #[serde(default)]
    pub severity_overrides: BTreeMap<String, Severity>,
    /// Warnings fail as well as errors.
    #[serde(default)]
    pub strict: bool,
}

impl LintConfig {
    pub fn validate(&self) -> Result<(), LintConfigError> {
        match self.severity_overrides.keys().find(|k| rule(k).is_none()) {
            Some(k) => Err(LintConfigError::UnknownRule(k.clone())),
            None => Ok(()),
        }
    }

    /// Effective severity; the leakage rule never drops below warning.
    pub fn severity(&self, r: &Rule) -> Severity {
        let s = self.severity_overrides.get(r.id).copied().unwrap_or(r.default_severity);
        if r.id == "R2" { s.max(Severity::Warning) } else { s }
    }

    pub fn fails(&self, findings: &[Finding]) -> bool {
        let floor = if self.strict { Severity::Warning } else { Severity::Error };
        findings.iter().any(|f| f.severity >= floor)
    }
}

pub fn lint(m: &MethodologyManifest) -> Vec<Finding> {
    lint_with(m, &LintConfig::default())
}

pub fn lint_with(m: &MethodologyManifest, cfg: &LintConfig) -> Vec<Finding> {
    let mut out = Vec::new();
    let mut push = |id: &str, path: String, message: String| {
        let r = rule(id).expect("registered rule");
        out.push(Finding::new(id, cfg.severity(r), path, message));
    };
    if m.results_on == ResultsOn::Val {
        push("R1", "results_on".into(), "results are reported on validation data rather than a held-out test set".into());
    }
    if let Some(a) = &m.augmentation {
        if a.timing == AugmentationTiming::PreSplit {
            push("R2", "augmentation.timing".into(), "augmentation performed before the train/test split risks leakage".into());
        }
    }
    if m.metrics_reported.len() == 1 && m.metrics_reported.contains(&ReportedMetric::Accuracy) {
        push("R3", "metrics_reported".into(), "only accuracy is reported".into());
    }
    if m.cross_validation.is_none() {
        push("R4", "cross_validation".into(), "no cross-validation reported".into());
    }
    for (i, s) in m.wrangling.iter().enumerate() {
        if !s.specified {
            push("R5", format!("wrangling[{i}]"), format!("wrangling step {:?} is unspecified or unclear", s.name));
        }
    }
    if let Some(a) = &m.augmentation {
        for (i, s) in a.techniques.iter().enumerate() {
            if !s.specified {
                push("R5", format!("augmentation.techniques[{i}]"), format!("augmentation step {:?} is unspecified or unclear", s.name));
            }
        }
        if a.timing == AugmentationTiming::Unspecified {
            push("R5", "augmentation.timing".into(), "augmentation timing relative to the split is unspecified".into());
        }
    }
    if m.xai.is_empty() {
        push("R6", "xai".into(), "no explainability technique reported".into());
    }
    out
}

/// Column order of [`render_comparison`].
pub const COMPARISON_COLUMNS: [&str; 15] = [
    "study",
    "datasets",
    "wrangling",
    "augmentation",
    "augmentation_timing",
    "best_model",
    "cross_validation",
    "xai",
    "results_on",
    "accuracy",
    "f1",
    "precision",
    "recall",
    "specificity",
    "auc",
];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ComparisonTable {
    pub rows: Vec<Vec<String>>,
}

fn steps_cell(steps: &[Step]) -> String {
    if steps.is_empty() {
        return NA.into();
    }
    steps.iter().map(|s| if s.specified { s.name.clone() } else { format!("{} (unclear)", s.name) }).collect::<Vec<_>>().join("; ")
}

fn list_cell(items: &[String]) -> String {
    if items.is_empty() { NA.into() } else { items.join("; ") }
}

pub fn comparison_row(m: &MethodologyManifest) -> Vec<String> {
    let timing = |a: &Augmentation| match a.timing {
        AugmentationTiming::PreSplit => "pre_split",
        AugmentationTiming::PostSplit => "post_split",
        AugmentationTiming::Unspecified => "unspecified",
    };
    let cv = m.cross_validation.as_ref().map_or(NA.to_string(), |cv| match (cv.k, &cv.note) {
        (Some(k), Some(n)) => format!("{k}-fold ({n})"),
        (Some(k), None) => format!("{k}-fold"),
        (None, Some(n)) => n.clone(),
        (None, None) => "yes".into(),
    });
    let mut row = vec![
        m.study_id.clone(),
        list_cell(&m.datasets),
        steps_cell(&m.wrangling),
        m.augmentation.as_ref().map_or(NA.into(), |a| steps_cell(&a.techniques)),
        m.augmentation.as_ref().map_or(NA.into(), |a| timing(a).into()),
        m.best_model.clone(),
        cv,
        list_cell(&m.xai),
        m.results_on.as_str().into(),
    ];
    for metric in ReportedMetric::ALL {
        row.push(match (m.metric_values.get(&metric), m.metrics_reported.contains(&metric)) {
            (Some(v), _) => v.clone(),
            (None, true) => "reported".into(),
            (None, false) => NA.into(),
        });
    }
    row
}

/// One row per study; columns follow [`COMPARISON_COLUMNS`].
pub fn render_comparison(manifests: &[MethodologyManifest]) -> ComparisonTable {
    ComparisonTable { rows: manifests.iter().map(comparison_row).collect() }
}

impl ComparisonTable {
    pub fn to_csv(&self) -> String {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
        w.write_record(COMPARISON_COLUMNS).expect("in-memory write");
        for r in &self.rows {
            w.write_record(r).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
    }

    pub fn to_text(&self) -> String {
        let mut widths: Vec<usize> = COMPARISON_COLUMNS.iter().map(|c| c.chars().count()).collect();
        for r in &self.rows {
            for (w, cell) in widths.iter_mut().zip(r) {
                *w = (*w).max(cell.chars().count());
            }
        }
        let line = |cells: &mut dyn Iterator<Item = &str>| {
            let parts: Vec<String> = cells.zip(&widths).map(|(c, &w)| format!("{c:<w$}")).collect();
            parts.join(" | ").trim_end().to_string() + "\n"
        };
        let mut out = line(&mut COMPARISON_COLUMNS.iter().copied());
        out += &(widths.iter().map(|&w| "-".repeat(w)).collect::<Vec<_>>().join("-+-") + "\n");
        for r in &self.rows {
            out += &line(&mut r.iter().map(String::as_str));
        }
        out
    }
}

impl fmt::Display for ComparisonTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_text())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn compliant() -> MethodologyManifest {
        MethodologyManifest {
            schema: METHODOLOGY_SCHEMA.into(),
            study_id: "compliant".into(),
            datasets: vec!["HAM10000".into()],
            wrangling: vec![Step::new("Resizing to 224x224")],
            augmentation: Some(Augmentation { techniques: vec![Step::new("Horizontal flipping")], timing: AugmentationTiming::PostSplit }),
            best_model: "ViT".into(),
            cross_validation: Some(CrossValidation { k: Some(5), note: None }),
            xai: vec!["attention maps".into()],
            results_on: ResultsOn::Test,
            metrics_reported: [ReportedMetric::Accuracy, ReportedMetric::F1].into(),
            metric_values: BTreeMap::new(),
        }
    }

    #[test]
    fn compliant_is_clean() {
        assert!(lint(&compliant()).is_empty());
    }

    #[test]
    fn bad_timing_reports_path() {
        let text = compliant().to_json().replace("post_split", "sometimes");
        let e = MethodologyManifest::parse(&text).unwrap_err();
        assert_eq!(e.path, "augmentation.timing");
    }

    #[test]
    fn string_steps_accepted() {
        let mut v: serde_json::Value = serde_json::from_str(&compliant().to_json()).unwrap();
        v["wrangling"] = serde_json::json!(["Resizing", {"name": "filtering", "specified": false}]);
        let m = MethodologyManifest::parse(&v.to_string()).unwrap();
        assert_eq!(m.wrangling, vec![Step::new("Resizing"), Step::unspecified("filtering")]);
        assert_eq!(lint(&m).iter().map(|f| f.rule_id.as_str()).collect::<Vec<_>>(), vec!["R5"]);
    }

    #[test]
    fn round_trip() {
        let text = compliant().to_json();
        assert_eq!(MethodologyManifest::parse(&text).unwrap().to_json(), text);
    }

    #[test]
    fn r2_never_below_warning() {
        let mut cfg = LintConfig::default();
        cfg.severity_overrides.insert("R2".into(), Severity::Info);
        let r2 = rule("R2").unwrap();
        assert_eq!(cfg.severity(r2), Severity::Warning);
        cfg.severity_overrides.insert("R1".into(), Severity::Info);
        assert_eq!(cfg.severity(rule("R1").unwrap()), Severity::Info);
        cfg.severity_overrides.insert("R9".into(), Severity::Info);
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn registry_covers_rules() {
        let ids: Vec<_> = RULES.iter().map(|r| r.id).collect();
        assert_eq!(ids, ["R1", "R2", "R3", "R4", "R5", "R6"]);
        assert!(RULES.iter().all(|r| !r.anchor.is_empty()));
        let errors: Vec<_> = RULES.iter().filter(|r| r.default_severity == Severity::Error).map(|r| r.id).collect();
        assert_eq!(errors, ["R2"]);
    }

    #[test]
    fn comparison_na_cells() {
        let mut m = compliant();
        m.metric_values.insert(ReportedMetric::Accuracy, "97.00%".into());
        let t = render_comparison(&[m]);
        assert_eq!(t.rows.len(), 1);
        let col = |name: &str| COMPARISON_COLUMNS.iter().position(|c| *c == name).unwrap();
        assert_eq!(t.rows[0][col("specificity")], "N/A");
        assert_eq!(t.rows[0][col("accuracy")], "97.00%");
        assert_eq!(t.rows[0][col("f1")], "reported");
        assert!(t.to_csv().starts_with("study,datasets,wrangling,"));
        assert_eq!(t.to_text().lines().count(), 3);
    }
}
