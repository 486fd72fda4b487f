use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rigorbench::attention::{self, AttentionTensor};
use rigorbench::augment::{self, AugmentPlan};
use rigorbench::corpus::{self, DatasetManifest, ExclusionLedger, LabelSource};
use rigorbench::leakage::{self, PathRasters};
use rigorbench::methodology::{self, LintConfig, MethodologyManifest};
use rigorbench::metrics::{self, MetricName, MetricReport, PredictionSet};
use rigorbench::pitfall::{self, SyntheticSpec};
use rigorbench::protocol::{self, RunLog};
use rigorbench::raster;
use rigorbench::report::{self, LintSummary, StudyInputs};
use rigorbench::runlog::{self, ArtifactDigest, RunDraft, RunFilter, RunStore};
use rigorbench::split::{self, FoldPlan, Partition, SplitManifest, SplitSpec};
use rigorbench::stats::{self, CorrelationResult};
use rigorbench::{Finding, Severity};
use chrono::{DateTime, Utc};
use serde_json::{json, Value};

use crate::args::*;
use crate::config::GlobalConfig;
use crate::error::CliError;
use crate::output::Output;

type Result<T> = std::result::Result<T, CliError>;

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

fn to_value<T: serde::Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("serializable")
}

fn read_split(path: &Path) -> Result<SplitManifest> {
    Ok(SplitManifest::from_json(&read_text(path)?)?)
}

fn path_str(p: &Path) -> String {
    p.display().to_string()
}

pub fn run(cmd: &Command, cfg: &GlobalConfig) -> Result<Output> {
    match cmd {
        Command::Audit(a) => audit(a, cfg),
        Command::Split(a) => split_cmd(a, cfg),
        Command::Kfold(a) => kfold(a, cfg),
        Command::LeakScan(a) => leak_scan(a, cfg),
        Command::Augment(a) => augment_cmd(a, cfg),
        Command::Metrics(a) => metrics_cmd(a, cfg),
        Command::Stats(a) => stats_cmd(a, cfg),
        Command::Attnviz(a) => attnviz(a, cfg),
        Command::RunlogCheck(a) => runlog_check(a, cfg),
        Command::Lint(a) => lint(a, cfg),
        Command::Simulate(a) => simulate(a, cfg),
        Command::Runs(a) => runs(a, cfg),
        Command::Report(a) => report_cmd(a, cfg),
    }
}

fn audit(a: &AuditArgs, cfg: &GlobalConfig) -> Result<Output> {
    if a.near_threshold > 64 {
        return Err(CliError::usage(format!("--near-threshold {} outside 0..=64", a.near_threshold)));
    }
    let labels = LabelSource::parse(&a.labels)?;
    let scanned = corpus::scan_corpus(&a.corpus, &labels)?;
    let groups = corpus::find_duplicates(&scanned.records, a.near_threshold, a.scan.into())?;
    let ledger_path = cfg.out_path(a.ledger.as_deref(), "exclusions.json");
    let (ledger, generated) = if ledger_path.exists() {
        (ExclusionLedger::from_json(&read_text(&ledger_path)?)?, false)
    } else {
        let l = ExclusionLedger::from_duplicate_groups(&groups);
        write_file(&ledger_path, l.to_json().as_bytes())?;
        (l, true)
    };
    let cleaned = corpus::apply_exclusions(&scanned, &ledger)?;
    let out = cfg.out_path(a.out.as_deref(), "manifest.csv");
    cleaned.write(&out).map_err(CliError::from)?;
    let exact = groups.iter().filter(|g| g.kind == corpus::DuplicateKind::Exact).count();
    let result = json!({
        "scanned": scanned.len(),
        "labels": scanned.labels(),
        "near_threshold": a.near_threshold,
        "duplicate_groups": { "exact": exact, "near": groups.len() - exact },
        "groups": to_value(&groups),
        "ledger": { "path": path_str(&ledger_path), "generated": generated, "entries": ledger.entries.len() },
        "cleaning": to_value(&cleaned.cleaning),
        "manifest": path_str(&out),
    });
    Ok(Output::new("audit", cfg.seed, result))
}

fn split_cmd(a: &SplitArgs, cfg: &GlobalConfig) -> Result<Output> {
    let spec = SplitSpec::new(a.train, a.val, a.test, cfg.seed)?;
    let manifest = DatasetManifest::read(&a.manifest)?;
    let s = split::stratified_holdout(&manifest, &spec)?;
    let verification = split::verify_split(&manifest, &s)?;
    let out = cfg.out_path(a.out.as_deref(), "split.json");
    write_file(&out, s.to_json().as_bytes())?;
    let sizes: BTreeMap<&str, usize> = Partition::ALL.iter().map(|p| (p.as_str(), s.ids_in(*p).len())).collect();
    let result = json!({
        "proportions": to_value(&s.proportions),
        "sizes": sizes,
        "class_table": to_value(&s.class_table),
        "verification": {
            "disjoint": verification.disjoint,
            "exhaustive": verification.exhaustive,
            "max_deviation": verification.max_deviation,
            "passed": verification.passed,
        },
        "split": path_str(&out),
    });
    Ok(Output::new("split", cfg.seed, result).failing(!verification.passed))
}

fn kfold(a: &KfoldArgs, cfg: &GlobalConfig) -> Result<Output> {
    let manifest = DatasetManifest::read(&a.manifest)?;
    let s = read_split(&a.split)?;
    let plan: FoldPlan = split::kfold_from_split(&manifest, &s, a.k, cfg.seed)?;
    let out = cfg.out_path(a.out.as_deref(), "kfold.json");
    write_file(&out, plan.to_json().as_bytes())?;
    let result = json!({
        "k": plan.k,
        "pool": plan.assignment.len(),
        "fold_sizes": plan.fold_sizes(),
        "kfold": path_str(&out),
    });
    Ok(Output::new("kfold", cfg.seed, result))
}

fn leak_scan(a: &LeakScanArgs, cfg: &GlobalConfig) -> Result<Output> {
    let s = read_split(&a.split)?;
    let manifest = DatasetManifest::read(&a.manifest)?;
    let strategy = a.scan.into();
    let mut findings = leakage::cross_split_scan(&s, &manifest.records, a.near_threshold, strategy)?;
    if a.transforms {
        findings.extend(leakage::transform_invariant_scan(&s, &manifest.records, &PathRasters, a.near_threshold, strategy)?);
        findings.sort();
    }
    let out = cfg.out_path(a.out.as_deref(), "leak_findings.jsonl");
    write_file(&out, leakage::findings_to_jsonl(&findings).as_bytes())?;
    let summary = leakage::leakage_rate(&findings, &s);
    let result = json!({
        "near_threshold": a.near_threshold,
        "transforms": a.transforms,
        "summary": to_value(&summary),
        "findings": path_str(&out),
    });
    let display = findings
        .iter()
        .map(|f| {
            let t = f.transform.map(|t| format!(" {}", t.name())).unwrap_or_default();
            format!("{} {} <- train {} [{:?} d={}{t}]\n", f.eval_split.as_str(), f.eval_id, f.train_id, f.kind, f.hamming)
        })
        .collect::<String>();
    let mut o = Output::new("leak-scan", cfg.seed, result).failing(cfg.strict && !findings.is_empty());
    if !display.is_empty() {
        o = o.with_display(display);
    }
    Ok(o)
}

fn augment_cmd(a: &AugmentArgs, cfg: &GlobalConfig) -> Result<Output> {
    let s = read_split(&a.split)?;
    let manifest = DatasetManifest::read(&a.manifest)?;
    let plan = match &a.plan {
        Some(p) => AugmentPlan::from_json(&read_text(p)?, cfg.seed)?,
        None => AugmentPlan::dihedral(a.copies, cfg.seed),
    };
    let out = augment::augment_training_set(&s, &manifest, &plan)?;
    let img_dir = cfg.out_dir.join("augmented");
    let mut written = 0usize;
    if !a.no_images {
        for r in &out.augmented {
            let src = manifest.get(&r.source_id).expect("augmented source exists");
            let img = raster::decode_path(Path::new(&src.path))?;
            let aug = augment::apply_all(&img, &r.ops);
            let path = img_dir.join(format!("{}.png", attention::safe_file_stem(&r.id)));
            write_file(&path, &pitfall::png_bytes(&aug))?;
            written += 1;
        }
    }
    let prov = cfg.out_dir.join("augmented.json");
    write_file(&prov, out.to_json().as_bytes())?;
    let result = json!({
        "copies_per_image": plan.copies_per_image,
        "train_sources": s.ids_in(Partition::Train).len(),
        "augmented": out.augmented.len(),
        "images_written": written,
        "val_untouched": out.val_ids.len(),
        "test_untouched": out.test_ids.len(),
        "provenance": path_str(&prov),
    });
    Ok(Output::new("augment", cfg.seed, result))
}

fn load_predictions(path: &Path, partition: Option<Partition>) -> Result<PredictionSet> {
    let mut set = PredictionSet::from_csv(&read_text(path)?)?;
    if let Some(p) = partition {
        set.records.retain(|r| r.split == p);
    }
    Ok(set)
}

fn parse_partition(s: &str) -> Result<Partition> {
    Partition::ALL
        .into_iter()
        .find(|p| p.as_str() == s)
        .ok_or_else(|| CliError::usage(format!("unknown partition {s:?} (train, val or test)")))
}

fn metrics_cmd(a: &MetricsArgs, cfg: &GlobalConfig) -> Result<Output> {
    let partition = a.partition.as_deref().map(parse_partition).transpose()?;
    let mut reports = Vec::new();
    let mut per_file = Vec::new();
    for (i, p) in a.predictions.iter().enumerate() {
        let set = load_predictions(p, partition)?;
        let given = (!a.labels.is_empty()).then_some(a.labels.as_slice());
        let labels = if given.is_some() || set.labels.is_empty() {
            metrics::resolve_labels(given, &set.records)
        } else {
            set.labels.clone()
        };
        let issues = set.validate();
        let report = metrics::evaluate(&set.records, &labels)?;
        let name = if a.predictions.len() == 1 { "metrics".to_string() } else { format!("metrics_fold{i}") };
        let report_path = cfg.out_dir.join(format!("{name}.json"));
        write_file(&report_path, report.to_json().as_bytes())?;
        write_file(&cfg.out_dir.join(format!("{name}_confusion.csv")), report.confusion.to_csv().as_bytes())?;
        let ci = if a.bootstrap > 0 {
            let (lo, hi) = metrics::bootstrap_ci(&set.records, &labels, MetricName::MacroF1, a.bootstrap, cfg.seed)?;
            json!({ "replicates": a.bootstrap, "macro_f1_low": lo, "macro_f1_high": hi })
        } else {
            Value::Null
        };
        per_file.push(json!({
            "predictions": path_str(p),
            "records": set.records.len(),
            "issues": to_value(&issues),
            "macro": to_value(&report.macro_avg),
            "per_class": to_value(&report.per_class),
            "bootstrap": ci,
            "report": path_str(&report_path),
        }));
        reports.push(report);
    }
    let mut result = json!({ "reports": per_file });
    if reports.len() >= 2 {
        let agg = metrics::aggregate_folds(&reports)?;
        let stats: BTreeMap<&str, Value> = agg
            .stats
            .iter()
            .map(|(m, s)| (m.as_str(), json!({ "mean": s.mean, "std": s.std, "ci_low": s.ci_low, "ci_high": s.ci_high, "mean_pm_std": s.mean_pm_std() })))
            .collect();
        result["aggregate"] = to_value(&stats);
    }
    let display = reports.iter().map(|r| r.confusion.to_text()).collect::<Vec<_>>().join("\n");
    Ok(Output::new("metrics", cfg.seed, result).with_display(display))
}

fn correlate(x: &[f64], y: &[f64], methods: &[String]) -> Result<Vec<CorrelationResult>> {
    let mut out = Vec::new();
    for m in methods {
        out.push(match m.as_str() {
            "pearson" => stats::pearson(x, y)?,
            "spearman" => stats::spearman(x, y)?,
            other => return Err(CliError::usage(format!("unknown method {other:?} (pearson or spearman)"))),
        });
    }
    Ok(out)
}

fn per_class_values(r: &MetricReport, metric: &str) -> Result<Vec<f64>> {
    r.per_class
        .iter()
        .map(|c| match metric {
            "f1" => Ok(c.f1),
            "precision" => Ok(c.precision),
            "recall" => Ok(c.recall),
            other => Err(CliError::usage(format!("unknown per-class metric {other:?} (f1, precision or recall)"))),
        })
        .collect()
}

fn stats_cmd(a: &StatsArgs, cfg: &GlobalConfig) -> Result<Output> {
    let (x, y) = match &a.metrics {
        Some(p) => {
            if a.against != "support" {
                return Err(CliError::usage(format!("--against {:?}: only `support` is available", a.against)));
            }
            let r = MetricReport::from_json(&read_text(p)?)?;
            let support: Vec<f64> = r.per_class.iter().map(|c| c.support as f64).collect();
            (support, per_class_values(&r, &a.metric)?)
        }
        None if !a.x.is_empty() => (a.x.clone(), a.y.clone()),
        None => return Err(CliError::usage("give --metrics <report> or --x/--y")),
    };
    let results = correlate(&x, &y, &a.method)?;
    let mut rows = Vec::new();
    for r in &results {
        let mut row = to_value(r);
        if r.method == stats::CorrelationMethod::Spearman {
            row["permutation_p"] = to_value(&stats::spearman_permutation_p(&x, &y)?);
        }
        rows.push(row);
    }
    let result = json!({ "x": x, "y": y, "results": rows });
    Ok(Output::new("stats", cfg.seed, result))
}

fn attnviz(a: &AttnvizArgs, cfg: &GlobalConfig) -> Result<Output> {
    let (nc, ni) = a
        .sample
        .split_once(',')
        .and_then(|(c, i)| Some((c.trim().parse::<usize>().ok()?, i.trim().parse::<usize>().ok()?)))
        .ok_or_else(|| CliError::usage(format!("--sample {:?}: expected <correct>,<incorrect>", a.sample)))?;
    let set = load_predictions(&a.predictions, Some(Partition::Test))?;
    let sel = attention::sample_cases(&set.records, nc, ni, cfg.seed);
    let dir = cfg.out_dir.join("attnviz");
    let mut rendered = Vec::new();
    for id in sel.correct.iter().chain(&sel.incorrect) {
        let rec = set.records.iter().find(|r| &r.image_id == id).expect("sampled from the set");
        let tensor = AttentionTensor::read(&a.attn_dir, id)?;
        let img = raster::decode_path(&a.images.join(id))?;
        let t = attention::render_triptych(&img, &tensor, &set, rec, a.alpha)?;
        t.write(&dir)?;
        rendered.push(to_value(&t.meta));
    }
    let result = json!({
        "alpha": a.alpha,
        "selection": to_value(&sel),
        "rendered": rendered,
        "dir": path_str(&dir),
    });
    Ok(Output::new("attnviz", cfg.seed, result))
}

fn fails(findings: &[Finding], strict: bool) -> bool {
    let floor = if strict { Severity::Warning } else { Severity::Error };
    findings.iter().any(|f| f.severity >= floor)
}

fn runlog_check(a: &RunlogCheckArgs, cfg: &GlobalConfig) -> Result<Output> {
    let log = RunLog::from_json(&read_text(&a.log)?)?;
    let findings = protocol::validate_runlog(&log)?;
    let expected: Vec<Value> = log
        .folds
        .iter()
        .map(|f| {
            let e = protocol::check_early_stopping(&f.val_f1, log.config.patience, log.config.max_epochs);
            json!({ "fold": f.fold, "logged_stop": f.stop_epoch, "expected_stop": e.stop_epoch, "logged_best": f.best_epoch, "expected_best": e.best_epoch })
        })
        .collect();
    let result = json!({
        "log": path_str(&a.log),
        "config": to_value(&log.config),
        "folds": expected,
        "findings": to_value(&findings),
    });
    Ok(Output::new("runlog-check", cfg.seed, result).failing(fails(&findings, cfg.strict)))
}

fn lint_config(severities: &[String], cfg: &GlobalConfig) -> Result<LintConfig> {
    let mut lc = LintConfig { severity_overrides: cfg.severity_overrides.clone(), strict: cfg.strict };
    for s in severities {
        let (rule, sev) = s.split_once('=').ok_or_else(|| CliError::usage(format!("--severity {s:?}: expected RULE=level")))?;
        let sev: Severity = serde_json::from_value(Value::String(sev.to_ascii_lowercase()))
            .map_err(|_| CliError::usage(format!("--severity {s:?}: level must be info, warning or error")))?;
        lc.severity_overrides.insert(rule.to_string(), sev);
    }
    lc.validate()?;
    Ok(lc)
}

fn lint(a: &LintArgs, cfg: &GlobalConfig) -> Result<Output> {
    let lc = lint_config(&a.severities, cfg)?;
    let mut manifests = Vec::new();
    let mut studies = Vec::new();
    let mut all = Vec::new();
    for p in &a.manifests {
        let m = MethodologyManifest::parse(&read_text(p)?)
            .map_err(|e| CliError::format(format!("{}: {e}", p.display())))?;
        let findings = methodology::lint_with(&m, &lc);
        studies.push(json!({ "manifest": path_str(p), "study_id": m.study_id, "findings": to_value(&findings) }));
        all.extend(findings);
        manifests.push(m);
    }
    let mut result = json!({ "strict": lc.strict, "studies": studies });
    let mut out_display = None;
    if a.compare {
        let table = methodology::render_comparison(&manifests);
        let csv_path = cfg.out_dir.join("comparison.csv");
        write_file(&csv_path, table.to_csv().as_bytes())?;
        result["comparison_csv"] = Value::String(path_str(&csv_path));
        out_display = Some(table.to_text());
    }
    let mut o = Output::new("lint", cfg.seed, result).failing(lc.fails(&all));
    if let Some(d) = out_display {
        o = o.with_display(d);
    }
    Ok(o)
}

fn simulate(a: &SimulateArgs, cfg: &GlobalConfig) -> Result<Output> {
    let spec = SyntheticSpec { n_classes: a.classes, per_class: a.per_class, image_size: a.image_size, ..Default::default() };
    let plan = AugmentPlan::dihedral(a.copies, cfg.seed);
    let split_spec = SplitSpec::new(a.train, a.val, a.test, cfg.seed)?;
    let report = pitfall::compare_protocols(&spec, &plan, &split_spec, cfg.seed, a.seeds)?;
    let path = cfg.out_dir.join("simulate.json");
    write_file(&path, report.to_json().as_bytes())?;
    let result = json!({
        "rows": to_value(&report.rows),
        "delta": to_value(&report.delta),
        "sign_test": to_value(&report.sign_test),
        "report": path_str(&path),
    });
    Ok(Output::new("simulate", cfg.seed, result).with_display(report.to_text()))
}

fn parse_time(s: &str) -> Result<DateTime<Utc>> {
    DateTime::parse_from_rfc3339(s)
        .map(|t| t.with_timezone(&Utc))
        .map_err(|_| CliError::usage(format!("bad RFC 3339 time {s:?}")))
}

fn runs(a: &RunsArgs, cfg: &GlobalConfig) -> Result<Output> {
    let store = RunStore::new(cfg.out_path(a.store.as_deref(), "runs.jsonl"));
    match &a.action {
        RunsAction::List { dataset, since, until } => {
            let filter = RunFilter {
                dataset: dataset.clone(),
                since: since.as_deref().map(parse_time).transpose()?,
                until: until.as_deref().map(parse_time).transpose()?,
            };
            let contents = store.read()?;
            let records = runlog::query_runs(&store, &filter)?;
            let rows: Vec<Value> = records
                .iter()
                .map(|r| json!({ "run_id": r.run_id, "timestamp": r.timestamp, "dataset": r.body.dataset, "metrics": to_value(&r.body.metrics) }))
                .collect();
            Ok(Output::new("runs list", cfg.seed, json!({ "store": path_str(store.path()), "runs": rows, "torn_tail": contents.torn_tail.is_some() })))
        }
        RunsAction::Show { id } => match store.get(id)? {
            Some(r) => Ok(Output::new("runs show", cfg.seed, to_value(&r))),
            None => Err(CliError::usage(format!("no run {id:?} in {}", store.path().display()))),
        },
        RunsAction::Add { dataset, config_snapshot, artifacts, metrics, seconds } => {
            let config = match config_snapshot {
                Some(p) => serde_json::from_str(&read_text(p)?).map_err(|e| CliError::format(format!("{}: {e}", p.display())))?,
                None => json!({ "seed": cfg.seed }),
            };
            let mut digests = Vec::new();
            for s in artifacts {
                let (role, path) = s.split_once('=').ok_or_else(|| CliError::usage(format!("--artifact {s:?}: expected role=path")))?;
                digests.push(ArtifactDigest::of_file(role, Path::new(path))?);
            }
            let mut m = BTreeMap::new();
            for s in metrics {
                let v = s
                    .split_once('=')
                    .and_then(|(k, v)| Some((k.to_string(), v.parse::<f64>().ok()?)))
                    .ok_or_else(|| CliError::usage(format!("--metric {s:?}: expected name=number")))?;
                m.insert(v.0, v.1);
            }
            let rec = store.append(RunDraft { dataset: dataset.clone(), config, artifacts: digests, metrics: m, wall_clock_seconds: *seconds })?;
            Ok(Output::new("runs add", cfg.seed, json!({ "store": path_str(store.path()), "run_id": rec.run_id, "timestamp": rec.timestamp })))
        }
    }
}

fn report_cmd(a: &ReportArgs, cfg: &GlobalConfig) -> Result<Output> {
    let mut inputs = StudyInputs::default();
    for (i, p) in a.folds.iter().enumerate() {
        inputs.folds.push((format!("fold {}", i + 1), report::load_metric_report(p)?));
    }
    if let Some(t) = &a.test {
        inputs.test = Some(report::load_metric_report(t)?);
    }
    if let Some(p) = &a.runlog {
        if !p.exists() {
            return Err(report::ReportError::MissingArtifact(p.clone()).into());
        }
        let log = RunLog::from_json(&read_text(p)?)?;
        inputs.runlog_findings = protocol::validate_runlog(&log)?;
    }
    let lc = lint_config(&[], cfg)?;
    for p in &a.methodology {
        if !p.exists() {
            return Err(report::ReportError::MissingArtifact(p.clone()).into());
        }
        let m = MethodologyManifest::parse(&read_text(p)?)?;
        inputs.lint.push(LintSummary { findings: methodology::lint_with(&m, &lc), study_id: m.study_id });
    }
    if a.correlate {
        let t = inputs.test.as_ref().ok_or_else(|| CliError::usage("--correlate needs --test"))?;
        let support: Vec<f64> = t.per_class.iter().map(|c| c.support as f64).collect();
        let f1: Vec<f64> = t.per_class.iter().map(|c| c.f1).collect();
        inputs.correlations = correlate(&support, &f1, &["pearson".into(), "spearman".into()])?;
    }
    let card = report::build_study_card(inputs, cfg.seed)?;
    let md = card.to_markdown();
    let md_path = cfg.out_dir.join("study_card.md");
    let json_path: PathBuf = cfg.out_dir.join("study_card.json");
    write_file(&md_path, md.as_bytes())?;
    write_file(&json_path, card.to_json().as_bytes())?;
    let mut result = to_value(&card);
    result["files"] = json!({ "markdown": path_str(&md_path), "json": path_str(&json_path) });
    Ok(Output::new("report", cfg.seed, result).with_display(md))
}
