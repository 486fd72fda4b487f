"""Smoke test for the rigorbench extension module.

Build and install first:
    cd crates/py && maturin build --release -o dist && pip install dist/*.whl
then run `python python/smoke_test.py`.
"""

import json
import struct
import tempfile
from pathlib import Path

import rigorbench as rb


def check_attention(tmp: Path) -> None:
    t = rb.AttentionTensor([2, 3], [0, 1, 2, 3, 4, 5], "class0/img 1.png", layer="block11")
    raw = t.encode()
    assert raw[:4] == b"ATTN"
    assert struct.unpack("<H", raw[4:6])[0] == 1
    t.write(str(tmp))
    back = rb.AttentionTensor.read(str(tmp), "class0/img 1.png")
    assert back.dims == [2, 3] and back.layer == "block11"
    assert back.data == t.data
    heat, degenerate = t.process(2, 3)
    assert heat[0] == 0.0 and heat[-1] == 1.0 and not degenerate
    _, degenerate = rb.AttentionTensor([2, 2], [1, 1, 1, 1], "flat").process(4, 4)
    assert degenerate


def check_runlog() -> None:
    assert rb.check_early_stopping([0.5, 0.7, 0.6, 0.6, 0.6], 3, 15) == (5, 2)
    series = [0.5, 0.6, 0.7, 0.65, 0.66, 0.64]
    folds = [
        {"fold": f, "val_f1": series, "stop_epoch": 6, "best_epoch": 3, "wall_clock_seconds": 1.0}
        for f in range(5)
    ]
    log = {
        "schema": "rigorbench_runlog_v1",
        "config": {"seed": 42, "k": 5, "max_epochs": 15, "patience": 3,
                   "optimizer": "adamw", "hyperparameters": {"lr": "2e-5"}},
        "folds": folds,
        "final_report": {"path": "test.json", "partition": "test"},
    }
    assert rb.validate_runlog(json.dumps(log)) == []
    log["final_report"]["partition"] = "val"
    ids = [f["rule_id"] for f in rb.validate_runlog(json.dumps(log))]
    assert ids == ["RESULTS_ON_VALIDATION"], ids
    try:
        rb.validate_runlog("{}")
    except rb.RigorbenchError:
        pass
    else:
        raise AssertionError("malformed log accepted")


def check_predictions() -> None:
    csv = (
        "image_id,true_label,predicted_label,split,p_a,p_b\n"
        "x1,a,a,test,0.9,0.1\n"
        "x2,a,b,test,0.4,0.6\n"
        "x3,b,b,test,0.2,0.8\n"
        "x4,b,b,test,0.3,0.7\n"
    )
    assert rb.validate_predictions(csv) == []
    report = rb.evaluate_predictions(csv)
    assert abs(report["macro"]["f1"] - (2 / 3 + 0.8) / 2) < 1e-12
    assert report["confusion"]["counts"] == [[1, 1], [0, 2]]


def check_stats_and_lint() -> None:
    r = rb.pearson([1, 2, 3, 4], [2, 1, 4, 3])
    assert abs(r["coefficient"] - 0.6) < 1e-12
    manifest = {
        "schema": "rigorbench_methodology_v1",
        "study_id": "s",
        "datasets": ["HAM10000"],
        "wrangling": [],
        "best_model": "ViT",
        "xai": [],
        "results_on": "val",
        "metrics_reported": ["accuracy"],
    }
    rules = sorted(f["rule_id"] for f in rb.lint_methodology(json.dumps(manifest)))
    assert rules == ["R1", "R3", "R4", "R6"], rules


def check_store(tmp: Path) -> None:
    art = tmp / "preds.csv"
    art.write_text("x")
    store = rb.RunStore(str(tmp / "runs.jsonl"))
    rid = store.append(dataset="ham", config=json.dumps({"lr": 2e-5}),
                       metrics={"macro_f1": 0.85}, artifacts=[("predictions", str(art))])
    store.append(dataset="isic")
    assert [r["run_id"] for r in store.query(dataset="ham")] == [rid]
    assert store.get(rid)["artifacts"][0]["sha256"] == rb.sha256_hex(b"x")


def check_split(tmp: Path) -> None:
    import numpy as np
    from PIL import Image

    rng = np.random.default_rng(0)
    for c in range(2):
        (tmp / "corpus" / f"c{c}").mkdir(parents=True)
        for i in range(10):
            px = rng.integers(0, 256, size=(16, 16, 3), dtype=np.uint8)
            Image.fromarray(px).save(tmp / "corpus" / f"c{c}" / f"{i}.png")
    Image.open(tmp / "corpus/c0/0.png").save(tmp / "corpus/c1/copy.png")
    path = tmp / "manifest.csv"
    cleaning = rb.audit_corpus(str(tmp / "corpus"), str(path))
    assert cleaning["excluded_ids"] == ["c1/copy.png"], cleaning["excluded_ids"]
    s = rb.stratified_split(str(path), 0.6, 0.2, 0.2, seed=7)
    assert len(s) == 20 and s.seed == 7
    assert len(s.ids("test")) == 4
    assert rb.verify_split(str(path), s)["passed"]
    again = rb.SplitManifest.from_json(s.to_json())
    assert again.ids("train") == s.ids("train")
    assert rb.dhash_file(str(tmp / "corpus/c0/0.png")) == rb.dhash_file(str(tmp / "corpus/c1/copy.png"))


def main() -> None:
    with tempfile.TemporaryDirectory() as d:
        tmp = Path(d)
        check_attention(tmp)
        check_runlog()
        check_predictions()
        check_stats_and_lint()
        check_store(tmp)
        check_split(tmp)
    sim = rb.simulate(n_seeds=2, per_class=20)
    assert len(sim["rows"]) == 2
    print("rigorbench python smoke test: ok")


if __name__ == "__main__":
    main()
