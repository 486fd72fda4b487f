use std::collections::BTreeSet;
use std::path::Path;
use std::process::{Command, Output};

use image::{Rgb, RgbImage};
use serde_json::Value;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_rigorbench"));
    c.env_remove("RIGORBENCH_OUT");
    c
}

fn run(dir: &Path, args: &[&str]) -> Output {
    bin().current_dir(dir).args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

// Distinct patterns per (class, index): stripes of varying period and phase.
fn pattern(c: u32, i: u32) -> RgbImage {
    RgbImage::from_fn(32, 32, |x, y| {
        let period = 3 + (i % 5);
        let v = if ((x * (c + 1) + y * (i + 2)) / period) % 2 == 0 { 30 } else { 220 };
        let shade = (40 * c + 7 * i) as u8;
        Rgb([v, v.wrapping_add(shade) / 2, 255 - v])
    })
}

/// Two classes, ten distinct images each.
fn corpus(dir: &Path) {
    for c in 0..2 {
        let d = dir.join("corpus").join(format!("class{c}"));
        std::fs::create_dir_all(&d).unwrap();
        for i in 0..10 {
            pattern(c, i).save(d.join(format!("{i:02}.png"))).unwrap();
        }
    }
}

#[test]
fn help_exits_zero() {
    let d = tempfile::tempdir().unwrap();
    assert_eq!(code(&run(d.path(), &["--help"])), 0);
    assert_eq!(code(&run(d.path(), &["--version"])), 0);
}

#[test]
fn usage_errors_exit_two() {
    let d = tempfile::tempdir().unwrap();
    assert_eq!(code(&run(d.path(), &["frobnicate"])), 2);
    assert_eq!(code(&run(d.path(), &["split"])), 2);
    let o = run(d.path(), &["stats", "--x", "1,2,3", "--y", "1,2,3", "--method", "kendall"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn missing_input_exits_three() {
    let d = tempfile::tempdir().unwrap();
    let o = run(d.path(), &["runlog-check", "nope.json"]);
    assert_eq!(code(&o), 3);
    assert!(String::from_utf8_lossy(&o.stderr).contains("nope.json"));
}

#[test]
fn seed_in_header_and_envelope() {
    let d = tempfile::tempdir().unwrap();
    let o = run(d.path(), &["--seed", "7", "stats", "--x", "1,2,3,4", "--y", "1,3,2,4"]);
    assert_eq!(code(&o), 0);
    assert!(stdout(&o).starts_with("# rigorbench stats (seed 7)\n"));
    let o = run(d.path(), &["--seed", "7", "--format", "json", "stats", "--x", "1,2,3,4", "--y", "1,3,2,4"]);
    let v: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["schema"], "rigorbench_cli_v1");
    assert_eq!(v["seed"], 7);
    assert_eq!(v["command"], "stats");
}

fn leaf_paths(prefix: &str, v: &Value, out: &mut BTreeSet<String>) {
    match v {
        Value::Object(m) if !m.is_empty() => m.iter().for_each(|(k, x)| {
            leaf_paths(&if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") }, x, out)
        }),
        Value::Array(a) if !a.is_empty() => a.iter().enumerate().for_each(|(i, x)| leaf_paths(&format!("{prefix}[{i}]"), x, out)),
        _ => {
            out.insert(prefix.to_string());
        }
    }
}

fn text_fields(text: &str) -> BTreeSet<String> {
    text.lines()
        .skip(1)
        .take_while(|l| !l.is_empty())
        .map(|l| l.split_once(": ").unwrap().0.to_string())
        .collect()
}

#[test]
fn text_and_json_carry_the_same_fields() {
    let d = tempfile::tempdir().unwrap();
    corpus(d.path());
    for args in [
        vec!["audit", "--corpus", "corpus"],
        vec!["split", "--manifest", "manifest.csv"],
        vec!["leak-scan", "--split", "split.json", "--manifest", "manifest.csv"],
    ] {
        let text = stdout(&run(d.path(), &args));
        // audit reuses the ledger it wrote on the first pass, so run it again
        // for both formats to compare like with like.
        let text = if args[0] == "audit" { stdout(&run(d.path(), &args)) } else { text };
        let mut jargs = vec!["--format", "json"];
        jargs.extend(&args);
        let v: Value = serde_json::from_str(&stdout(&run(d.path(), &jargs))).unwrap();
        let mut want = BTreeSet::new();
        leaf_paths("", &v["result"], &mut want);
        assert_eq!(text_fields(&text), want, "{}", args[0]);
    }
}

#[test]
fn planted_leak_fails_only_in_strict_mode() {
    let d = tempfile::tempdir().unwrap();
    corpus(d.path());
    assert_eq!(code(&run(d.path(), &["audit", "--corpus", "corpus"])), 0);
    assert_eq!(code(&run(d.path(), &["split", "--manifest", "manifest.csv", "--train", "0.6", "--val", "0.2", "--test", "0.2"])), 0);
    let split: Value = serde_json::from_str(&std::fs::read_to_string(d.path().join("split.json")).unwrap()).unwrap();
    let manifest = std::fs::read_to_string(d.path().join("manifest.csv")).unwrap();
    // Copy one test image over one train image of the same class.
    let assignment = split["assignment"].as_object().unwrap();
    let test_id = assignment.iter().find(|(_, p)| *p == "test").unwrap().0.clone();
    let class = test_id.split('/').next().unwrap();
    let train_id =
        assignment.iter().find(|(id, p)| *p == "train" && id.starts_with(class)).unwrap().0.clone();
    assert!(manifest.contains(&test_id) && manifest.contains(&train_id));
    // Give the train row the test row's hashes, as if the file were copied.
    std::fs::write(d.path().join("raw.csv"), leaky_manifest(&manifest, &train_id, &test_id)).unwrap();
    let scan = ["leak-scan", "--split", "split.json", "--manifest", "raw.csv"];
    let o = run(d.path(), &scan);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains(&format!("test {test_id} <- train {train_id}")), "{}", stdout(&o));
    let mut strict = vec!["--strict"];
    strict.extend(scan);
    assert_eq!(code(&run(d.path(), &strict)), 1);
}

/// The cleaned manifest with the train row's hashes replaced by the test row's.
fn leaky_manifest(manifest: &str, train_id: &str, test_id: &str) -> String {
    let mut rows: Vec<Vec<String>> = manifest.lines().map(|l| l.split(',').map(String::from).collect()).collect();
    let header = rows[0].clone();
    let col = |name: &str| header.iter().position(|h| h == name).unwrap();
    let (id, bh, ph) = (col("id"), col("byte_hash"), col("phash"));
    let src = rows.iter().find(|r| r[id] == test_id).unwrap().clone();
    for r in rows.iter_mut().filter(|r| r[id] == train_id) {
        r[bh] = src[bh].clone();
        r[ph] = src[ph].clone();
    }
    rows.iter().map(|r| r.join(",") + "\n").collect()
}

#[test]
fn out_dir_precedence() {
    let d = tempfile::tempdir().unwrap();
    let cfg = d.path().join("c.toml");
    std::fs::write(&cfg, "out_dir = \"from_config\"\n").unwrap();
    let add = ["--config", "c.toml", "runs", "add", "--metric", "acc=0.5"];
    assert_eq!(code(&run(d.path(), &add)), 0);
    assert!(d.path().join("from_config/runs.jsonl").exists());
    let o = bin().current_dir(d.path()).env("RIGORBENCH_OUT", "from_env").args(add).output().unwrap();
    assert_eq!(code(&o), 0);
    assert!(d.path().join("from_env/runs.jsonl").exists());
    let mut flag = vec!["--out-dir", "from_flag"];
    flag.extend(add);
    let o = bin().current_dir(d.path()).env("RIGORBENCH_OUT", "from_env").args(&flag).output().unwrap();
    assert_eq!(code(&o), 0);
    assert!(d.path().join("from_flag/runs.jsonl").exists());
}

#[test]
fn runs_round_trip() {
    let d = tempfile::tempdir().unwrap();
    std::fs::write(d.path().join("preds.csv"), "x").unwrap();
    let o = run(d.path(), &["--format", "json", "runs", "add", "--dataset", "ham", "--artifact", "preds=preds.csv", "--metric", "macro_f1=0.85"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let id = serde_json::from_str::<Value>(&stdout(&o)).unwrap()["result"]["run_id"].as_str().unwrap().to_string();
    run(d.path(), &["runs", "add", "--dataset", "isic"]);
    let o = run(d.path(), &["--format", "json", "runs", "list", "--dataset", "ham"]);
    let v: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["result"]["runs"].as_array().unwrap().len(), 1);
    let o = run(d.path(), &["--format", "json", "runs", "show", &id]);
    let v: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["result"]["metrics"]["macro_f1"], 0.85);
    assert_eq!(code(&run(d.path(), &["runs", "show", "nope"])), 2);
}

const MANIFEST: &str = r#"{
  "schema": "rigorbench_methodology_v1",
  "study_id": "s1",
  "datasets": ["HAM10000"],
  "wrangling": ["Resizing"],
  "augmentation": {"techniques": ["Horizontal flipping"], "timing": "post_split"},
  "best_model": "ViT",
  "cross_validation": {"k": 5},
  "xai": ["attention maps"],
  "results_on": "test",
  "metrics_reported": ["accuracy", "f1"]
}"#;

#[test]
fn lint_exit_codes_follow_severity() {
    let d = tempfile::tempdir().unwrap();
    std::fs::write(d.path().join("ok.json"), MANIFEST).unwrap();
    std::fs::write(d.path().join("val.json"), MANIFEST.replace("\"test\"", "\"val\"")).unwrap();
    std::fs::write(d.path().join("pre.json"), MANIFEST.replace("post_split", "pre_split")).unwrap();
    std::fs::write(d.path().join("bad.json"), MANIFEST.replace("post_split", "whenever")).unwrap();
    assert_eq!(code(&run(d.path(), &["lint", "ok.json"])), 0);
    assert_eq!(code(&run(d.path(), &["lint", "val.json"])), 0);
    assert_eq!(code(&run(d.path(), &["--strict", "lint", "val.json"])), 1);
    assert_eq!(code(&run(d.path(), &["lint", "pre.json"])), 1);
    assert_eq!(code(&run(d.path(), &["lint", "--severity", "R1=error", "val.json"])), 1);
    assert_eq!(code(&run(d.path(), &["lint", "--severity", "R9=error", "ok.json"])), 2);
    let o = run(d.path(), &["lint", "bad.json"]);
    assert_eq!(code(&o), 3);
    assert!(String::from_utf8_lossy(&o.stderr).contains("augmentation.timing"));
    let o = run(d.path(), &["lint", "--compare", "ok.json", "val.json"]);
    assert!(d.path().join("comparison.csv").exists());
    assert!(stdout(&o).contains("s1"));
}

fn runlog(stop: u32) -> String {
    format!(
        r#"{{"schema":"rigorbench_runlog_v1","config":{{"seed":42,"k":5,"max_epochs":15,"patience":3,"optimizer":"adamw","hyperparameters":{{}}}},
        "folds":[{}],"final_report":{{"path":"t.json","partition":"test"}}}}"#,
        (0..5)
            .map(|f| {
                let series: Vec<String> =
                    [0.5, 0.6, 0.7, 0.65, 0.66, 0.64, 0.63, 0.62, 0.61][..stop as usize].iter().map(|x| x.to_string()).collect();
                format!(r#"{{"fold":{f},"val_f1":[{}],"stop_epoch":{stop},"best_epoch":3,"wall_clock_seconds":1.0}}"#, series.join(","))
            })
            .collect::<Vec<_>>()
            .join(",")
    )
}

#[test]
fn runlog_check_flags_late_stop() {
    let d = tempfile::tempdir().unwrap();
    std::fs::write(d.path().join("good.json"), runlog(6)).unwrap();
    std::fs::write(d.path().join("late.json"), runlog(9)).unwrap();
    let o = run(d.path(), &["runlog-check", "good.json"]);
    assert_eq!(code(&o), 0, "{}{}", stdout(&o), String::from_utf8_lossy(&o.stderr));
    let o = run(d.path(), &["runlog-check", "late.json"]);
    assert_eq!(code(&o), 1);
    assert!(stdout(&o).contains("EARLY_STOP_MISMATCH"));
}

#[test]
fn simulate_small() {
    let d = tempfile::tempdir().unwrap();
    let o = run(d.path(), &["--format", "json", "simulate", "--seeds", "2", "--per-class", "20"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let v: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["result"]["rows"].as_array().unwrap().len(), 2);
    assert!(d.path().join("simulate.json").exists());
}

#[test]
fn kfold_augment_and_attnviz() {
    let d = tempfile::tempdir().unwrap();
    corpus(d.path());
    assert_eq!(code(&run(d.path(), &["audit", "--corpus", "corpus"])), 0);
    assert_eq!(code(&run(d.path(), &["split", "--manifest", "manifest.csv", "--train", "0.6", "--val", "0.2", "--test", "0.2"])), 0);

    let o = run(d.path(), &["--format", "json", "kfold", "--manifest", "manifest.csv", "--split", "split.json", "--k", "4"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let v: Value = serde_json::from_str(&stdout(&o)).unwrap();
    let sizes: Vec<u64> = v["result"]["fold_sizes"].as_array().unwrap().iter().map(|x| x.as_u64().unwrap()).collect();
    assert_eq!(sizes.len(), 4);
    assert_eq!(sizes.iter().sum::<u64>(), v["result"]["pool"].as_u64().unwrap());

    let o = run(d.path(), &["--format", "json", "augment", "--split", "split.json", "--manifest", "manifest.csv", "--copies", "2"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let v: Value = serde_json::from_str(&stdout(&o)).unwrap();
    let train = v["result"]["train_sources"].as_u64().unwrap();
    assert_eq!(v["result"]["augmented"].as_u64().unwrap(), 2 * train);
    assert_eq!(v["result"]["images_written"].as_u64().unwrap(), 2 * train);

    // Attention tensors for four test predictions, two right and two wrong.
    let attn = d.path().join("attn");
    std::fs::create_dir_all(&attn).unwrap();
    let mut csv = String::from("image_id,true_label,predicted_label,split,p_class0,p_class1\n");
    for (i, (t, p)) in [("class0", "class0"), ("class1", "class1"), ("class0", "class1"), ("class1", "class0")].iter().enumerate() {
        let id = format!("{t}/{i:02}.png");
        let p0 = if *p == "class0" { 0.8 } else { 0.2 };
        csv += &format!("{id},{t},{p},test,{p0},{}\n", 1.0 - p0);
        let data: Vec<f32> = (0..16).map(|v| v as f32).collect();
        rigorbench::attention::AttentionTensor::new(vec![4, 4], data, &id).unwrap().write(&attn).unwrap();
    }
    std::fs::write(d.path().join("preds.csv"), csv).unwrap();
    let o = run(d.path(), &["attnviz", "--predictions", "preds.csv", "--attn-dir", "attn", "--images", "corpus", "--sample", "1,3"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    assert!(text.contains("selection.incorrect_shortfall: true"), "{text}");
    let rendered = std::fs::read_dir(d.path().join("attnviz")).unwrap().count();
    assert_eq!(rendered, 3 * 4);
}
