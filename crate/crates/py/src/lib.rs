//! Python bindings. Structured results cross the boundary as JSON and are
//! decoded with the stdlib `json` module, so Python sees plain dicts and
//! lists with the same field names as the on-disk formats.

use std::collections::BTreeMap;
use std::path::PathBuf;

use pyo3::create_exception;
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyBytes;

use rigorbench::attention;
use rigorbench::augment::AugmentPlan;
use rigorbench::corpus::{self, DatasetManifest};
use rigorbench::methodology::{self, LintConfig, MethodologyManifest};
use rigorbench::metrics::{self, PredictionSet};
use rigorbench::pitfall::{self, SyntheticSpec};
use rigorbench::protocol::{self, RunLog};
use rigorbench::raster;
use rigorbench::runlog::{ArtifactDigest, RunDraft, RunFilter};
use rigorbench::split::{self, Partition, SplitSpec};
use rigorbench::stats;
use rigorbench::Severity;

create_exception!(rigorbench, RigorbenchError, PyValueError, "Invalid input or failed check in rigorbench.");

fn err(e: impl std::fmt::Display) -> PyErr {
    RigorbenchError::new_err(e.to_string())
}

fn json_to_py<'py>(py: Python<'py>, v: &impl serde::Serialize) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(v).map_err(err)?;
    py.import("json")?.call_method1("loads", (text,))
}

fn partition(s: &str) -> PyResult<Partition> {
    Partition::ALL.into_iter().find(|p| p.as_str() == s).ok_or_else(|| err(format!("unknown partition {s:?}")))
}

fn read_text(path: &str) -> PyResult<String> {
    std::fs::read_to_string(path).map_err(|e| err(format!("{path}: {e}")))
}

/// Dense attention map in ATTN layout: (H, W) or (C, H, W), row-major f32.
#[pyclass(name = "AttentionTensor", module = "rigorbench", skip_from_py_object)]
#[derive(Clone)]
pub struct PyAttentionTensor {
    inner: attention::AttentionTensor,
}

#[pymethods]
impl PyAttentionTensor {
    #[new]
    #[pyo3(signature = (dims, data, image_id, layer = "final"))]
    fn new(dims: Vec<usize>, data: Vec<f32>, image_id: &str, layer: &str) -> PyResult<Self> {
        let mut inner = attention::AttentionTensor::new(dims, data, image_id).map_err(err)?;
        inner.layer = layer.to_string();
        Ok(Self { inner })
    }

    #[staticmethod]
    fn read(dir: PathBuf, image_id: &str) -> PyResult<Self> {
        Ok(Self { inner: attention::AttentionTensor::read(&dir, image_id).map_err(err)? })
    }

    #[staticmethod]
    #[pyo3(signature = (payload, image_id, layer = "final"))]
    fn decode(payload: &[u8], image_id: &str, layer: &str) -> PyResult<Self> {
        let side = attention::AttentionSidecar { image_id: image_id.to_string(), layer: layer.to_string() };
        Ok(Self { inner: attention::AttentionTensor::decode(payload, &side).map_err(err)? })
    }

    /// Writes `<id>.attn` and `<id>.attn.json` into `dir`.
    fn write(&self, dir: PathBuf) -> PyResult<()> {
        self.inner.write(&dir).map_err(err)
    }

    fn encode<'py>(&self, py: Python<'py>) -> Bound<'py, PyBytes> {
        PyBytes::new(py, &self.inner.encode())
    }

    /// Channel mean, bilinear resize to (height, width), min-max scaling.
    /// Returns the flattened map and whether it was constant.
    fn process(&self, height: usize, width: usize) -> PyResult<(Vec<f64>, bool)> {
        let p = attention::process(&self.inner, height, width).map_err(err)?;
        Ok((p.heat.data, p.degenerate))
    }

    #[getter]
    fn dims(&self) -> Vec<usize> {
        self.inner.dims.clone()
    }

    #[getter]
    fn data(&self) -> Vec<f32> {
        self.inner.data.clone()
    }

    #[getter]
    fn image_id(&self) -> String {
        self.inner.source_image_id.clone()
    }

    #[getter]
    fn layer(&self) -> String {
        self.inner.layer.clone()
    }

    fn __repr__(&self) -> String {
        format!("AttentionTensor(dims={:?}, image_id={:?})", self.inner.dims, self.inner.source_image_id)
    }
}

/// Train/val/test assignment produced by `stratified_split`.
#[pyclass(name = "SplitManifest", module = "rigorbench", skip_from_py_object)]
#[derive(Clone)]
pub struct PySplitManifest {
    inner: split::SplitManifest,
}

#[pymethods]
impl PySplitManifest {
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(Self { inner: split::SplitManifest::from_json(text).map_err(err)? })
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Self::from_json(&read_text(path)?)
    }

    fn to_json(&self) -> String {
        self.inner.to_json()
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed
    }

    /// Ids assigned to "train", "val" or "test".
    fn ids(&self, part: &str) -> PyResult<Vec<String>> {
        Ok(self.inner.ids_in(partition(part)?).into_iter().map(String::from).collect())
    }

    fn partition_of(&self, image_id: &str) -> Option<&'static str> {
        self.inner.partition_of(image_id).map(Partition::as_str)
    }

    fn __len__(&self) -> usize {
        self.inner.assignment.0.len()
    }
}

/// Hashes every image under `root`, excludes all but the first member of
/// each duplicate group and writes the stamped manifest CSV to `out`.
/// Returns the cleaning report.
#[pyfunction]
#[pyo3(signature = (root, out, labels = "subdir", near_threshold = corpus::DEFAULT_NEAR_THRESHOLD))]
fn audit_corpus<'py>(py: Python<'py>, root: PathBuf, out: PathBuf, labels: &str, near_threshold: u32) -> PyResult<Bound<'py, PyAny>> {
    let source = corpus::LabelSource::parse(labels).map_err(err)?;
    let cleaned = py
        .detach(|| -> Result<DatasetManifest, corpus::CorpusError> {
            let scanned = corpus::scan_corpus(&root, &source)?;
            let groups = corpus::find_duplicates(&scanned.records, near_threshold, Default::default())?;
            corpus::apply_exclusions(&scanned, &corpus::ExclusionLedger::from_duplicate_groups(&groups))
        })
        .map_err(err)?;
    cleaned.write(&out).map_err(err)?;
    json_to_py(py, &cleaned.cleaning)
}

/// Stratified holdout split of a cleaned dataset manifest (CSV path).
#[pyfunction]
#[pyo3(signature = (manifest_path, train = 0.8, val = 0.1, test = 0.1, seed = rigorbench::DEFAULT_SEED))]
fn stratified_split(manifest_path: PathBuf, train: f64, val: f64, test: f64, seed: u64) -> PyResult<PySplitManifest> {
    let spec = SplitSpec::new(train, val, test, seed).map_err(err)?;
    let manifest = DatasetManifest::read(&manifest_path).map_err(err)?;
    Ok(PySplitManifest { inner: split::stratified_holdout(&manifest, &spec).map_err(err)? })
}

/// Checks a split against its dataset manifest: disjointness, coverage and
/// per-class proportions.
#[pyfunction]
fn verify_split<'py>(py: Python<'py>, manifest_path: PathBuf, split: &PySplitManifest) -> PyResult<Bound<'py, PyAny>> {
    let manifest = DatasetManifest::read(&manifest_path).map_err(err)?;
    let r = split::verify_split(&manifest, &split.inner).map_err(err)?;
    json_to_py(py, &serde_json::json!({
        "disjoint": r.disjoint,
        "exhaustive": r.exhaustive,
        "max_deviation": r.max_deviation,
        "passed": r.passed,
    }))
}

/// 64-bit difference hash of an image file.
#[pyfunction]
fn dhash_file(path: PathBuf) -> PyResult<u64> {
    let img = raster::decode_path(&path).map_err(err)?;
    corpus::compute_phash(&img).map_err(err)
}

#[pyfunction]
fn sha256_hex(data: &[u8]) -> String {
    corpus::compute_byte_hash(data)
}

/// Stop and best epochs (1-indexed) that the early-stopping rule implies.
#[pyfunction]
fn check_early_stopping(val_f1: Vec<f64>, patience: usize, max_epochs: usize) -> PyResult<(usize, usize)> {
    if val_f1.is_empty() || patience == 0 {
        return Err(err("need a non-empty series and patience >= 1"));
    }
    let e = protocol::check_early_stopping(&val_f1, patience, max_epochs);
    Ok((e.stop_epoch, e.best_epoch))
}

/// Parses a run log and returns its protocol findings.
#[pyfunction]
fn validate_runlog<'py>(py: Python<'py>, text: &str) -> PyResult<Bound<'py, PyAny>> {
    let log = RunLog::from_json(text).map_err(err)?;
    json_to_py(py, &protocol::validate_runlog(&log).map_err(err)?)
}

/// Structural issues in a predictions CSV (empty list when clean).
#[pyfunction]
fn validate_predictions<'py>(py: Python<'py>, csv_text: &str) -> PyResult<Bound<'py, PyAny>> {
    let set = PredictionSet::from_csv(csv_text).map_err(err)?;
    json_to_py(py, &set.validate())
}

/// Metric report (per-class, macro, confusion) for a predictions CSV.
#[pyfunction]
#[pyo3(signature = (csv_text, labels = None, partition = None))]
fn evaluate_predictions<'py>(
    py: Python<'py>,
    csv_text: &str,
    labels: Option<Vec<String>>,
    partition: Option<&str>,
) -> PyResult<Bound<'py, PyAny>> {
    let mut set = PredictionSet::from_csv(csv_text).map_err(err)?;
    if let Some(p) = partition {
        let p = self::partition(p)?;
        set.records.retain(|r| r.split == p);
    }
    let labels = match labels {
        Some(l) => l,
        None if !set.labels.is_empty() => set.labels.clone(),
        None => metrics::resolve_labels(None, &set.records),
    };
    json_to_py(py, &metrics::evaluate(&set.records, &labels).map_err(err)?)
}

#[pyfunction]
fn pearson<'py>(py: Python<'py>, x: Vec<f64>, y: Vec<f64>) -> PyResult<Bound<'py, PyAny>> {
    json_to_py(py, &stats::pearson(&x, &y).map_err(err)?)
}

#[pyfunction]
fn spearman<'py>(py: Python<'py>, x: Vec<f64>, y: Vec<f64>) -> PyResult<Bound<'py, PyAny>> {
    json_to_py(py, &stats::spearman(&x, &y).map_err(err)?)
}

/// Lints a methodology manifest (JSON text).
#[pyfunction]
#[pyo3(signature = (text, strict = false, severity = None))]
fn lint_methodology<'py>(
    py: Python<'py>,
    text: &str,
    strict: bool,
    severity: Option<BTreeMap<String, String>>,
) -> PyResult<Bound<'py, PyAny>> {
    let m = MethodologyManifest::parse(text).map_err(err)?;
    let mut overrides = BTreeMap::new();
    for (rule, level) in severity.unwrap_or_default() {
        let s: Severity = serde_json::from_value(serde_json::Value::String(level.clone()))
            .map_err(|_| err(format!("{rule}: bad severity {level:?}")))?;
        overrides.insert(rule, s);
    }
    let cfg = LintConfig { severity_overrides: overrides, strict };
    cfg.validate().map_err(err)?;
    json_to_py(py, &methodology::lint_with(&m, &cfg))
}

/// Paired flawed/sound protocol comparison on synthetic corpora.
#[pyfunction]
#[pyo3(signature = (n_seeds = 20, n_classes = 4, per_class = 50, copies = 3, image_size = 32, seed = rigorbench::DEFAULT_SEED))]
fn simulate<'py>(
    py: Python<'py>,
    n_seeds: usize,
    n_classes: usize,
    per_class: usize,
    copies: usize,
    image_size: u32,
    seed: u64,
) -> PyResult<Bound<'py, PyAny>> {
    let spec = SyntheticSpec { n_classes, per_class, image_size, ..Default::default() };
    let plan = AugmentPlan::dihedral(copies, seed);
    let split_spec = SplitSpec::new(0.8, 0.1, 0.1, seed).map_err(err)?;
    let report = py
        .detach(|| pitfall::compare_protocols(&spec, &plan, &split_spec, seed, n_seeds))
        .map_err(err)?;
    json_to_py(py, &report)
}

/// Append-only JSON-lines experiment store.
#[pyclass(name = "RunStore", module = "rigorbench")]
pub struct PyRunStore {
    inner: rigorbench::runlog::RunStore,
}

#[pymethods]
impl PyRunStore {
    #[new]
    fn new(path: PathBuf) -> Self {
        Self { inner: rigorbench::runlog::RunStore::new(path) }
    }

    /// Appends a run and returns its id. `config` is any JSON-serialisable
    /// text; artifacts are (role, path) pairs hashed at call time.
    #[pyo3(signature = (dataset = None, config = "{}", metrics = None, artifacts = None, wall_clock_seconds = 0.0))]
    fn append(
        &self,
        dataset: Option<String>,
        config: &str,
        metrics: Option<BTreeMap<String, f64>>,
        artifacts: Option<Vec<(String, PathBuf)>>,
        wall_clock_seconds: f64,
    ) -> PyResult<String> {
        let config = serde_json::from_str(config).map_err(err)?;
        let artifacts = artifacts
            .unwrap_or_default()
            .iter()
            .map(|(role, path)| ArtifactDigest::of_file(role, path))
            .collect::<Result<Vec<_>, _>>()
            .map_err(err)?;
        let draft = RunDraft { dataset, config, artifacts, metrics: metrics.unwrap_or_default(), wall_clock_seconds };
        Ok(self.inner.append(draft).map_err(err)?.run_id)
    }

    /// Runs matching the filters, oldest first. Bounds are RFC 3339 strings.
    #[pyo3(signature = (dataset = None, since = None, until = None))]
    fn query<'py>(
        &self,
        py: Python<'py>,
        dataset: Option<String>,
        since: Option<&str>,
        until: Option<&str>,
    ) -> PyResult<Bound<'py, PyAny>> {
        let parse = |s: &str| {
            chrono::DateTime::parse_from_rfc3339(s).map(|t| t.with_timezone(&chrono::Utc)).map_err(|e| err(format!("{s:?}: {e}")))
        };
        let filter = RunFilter { dataset, since: since.map(parse).transpose()?, until: until.map(parse).transpose()? };
        json_to_py(py, &self.inner.query(&filter).map_err(err)?)
    }

    fn get<'py>(&self, py: Python<'py>, run_id: &str) -> PyResult<Option<Bound<'py, PyAny>>> {
        self.inner.get(run_id).map_err(err)?.map(|r| json_to_py(py, &r)).transpose()
    }
}

#[pymodule]
#[pyo3(name = "rigorbench")]
pub fn rigorbench_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("RigorbenchError", m.py().get_type::<RigorbenchError>())?;
    m.add("DEFAULT_SEED", rigorbench::DEFAULT_SEED)?;
    m.add_class::<PyAttentionTensor>()?;
    m.add_class::<PySplitManifest>()?;
    m.add_class::<PyRunStore>()?;
    m.add_function(wrap_pyfunction!(audit_corpus, m)?)?;
    m.add_function(wrap_pyfunction!(stratified_split, m)?)?;
    m.add_function(wrap_pyfunction!(verify_split, m)?)?;
    m.add_function(wrap_pyfunction!(dhash_file, m)?)?;
    m.add_function(wrap_pyfunction!(sha256_hex, m)?)?;
    m.add_function(wrap_pyfunction!(check_early_stopping, m)?)?;
    m.add_function(wrap_pyfunction!(validate_runlog, m)?)?;
    m.add_function(wrap_pyfunction!(validate_predictions, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate_predictions, m)?)?;
    m.add_function(wrap_pyfunction!(pearson, m)?)?;
    m.add_function(wrap_pyfunction!(spearman, m)?)?;
    m.add_function(wrap_pyfunction!(lint_methodology, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    Ok(())
}
