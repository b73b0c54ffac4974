import json
import subprocess
import sys

import pytest

from uavids import jsonio
from uavids.cli import main

SYNTH = {"n_rows": 600, "n_numeric": 6, "n_categorical": 1, "n_classes": 3,
         "separability": 1.0, "missing_fraction": 0.01}


def _run(*argv):
    return main([str(a) for a in argv])


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    (root / "synth.json").write_text(json.dumps(SYNTH))
    assert _run("synth", "--spec", root / "synth.json", "--seed", 1, "--out", root / "d") == 0
    assert _run("preprocess", "--data", root / "d/dataset.csv", "--seed", 1, "--out", root / "p") == 0
    assert _run("train", "--data", root / "p/train.csv", "--model", "rf", "--model", "et",
                "--seed", 1, "--out", root / "m") == 0
    models = [root / "m/models/rf.json", root / "m/models/et.json"]
    assert _run("evaluate", "--data", root / "p/test.csv", "--models", *models, "--seed", 1,
                "--out", root / "e") == 0
    return root


def test_end_to_end_accuracy(pipeline):
    for short in ("rf", "et"):
        rep = jsonio.read_json(pipeline / f"e/metrics_{short}.json")
        assert rep["metrics"]["accuracy"] >= 0.99
    for name in ("table1.csv", "table2_rf.csv", "table3_et.csv", "confusion_rf.svg", "roc_et.svg"):
        assert (pipeline / "e" / name).exists()


def test_manifest_digests(pipeline):
    man = jsonio.read_json(pipeline / "e/manifest_evaluate.json")
    assert man["config"]["seed"] == 1
    assert "metrics_rf.json" in man["outputs"]
    assert any(k.endswith("test.csv") for k in man["inputs"])
    assert len(man["outputs"]["table1.csv"]) == 64


def test_reports_are_deterministic(pipeline, tmp_path):
    models = [pipeline / "m/models/rf.json", pipeline / "m/models/et.json"]
    assert _run("evaluate", "--data", pipeline / "p/test.csv", "--models", *models, "--seed", 1,
                "--out", tmp_path) == 0
    for name in ("metrics_rf.json", "table1.csv", "roc_rf.svg", "confusion_et.svg"):
        assert (tmp_path / name).read_bytes() == (pipeline / "e" / name).read_bytes()


def test_manifest_config_changes_with_seed(pipeline, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for out, seed in ((a, 1), (b, 2)):
        assert _run("synth", "--spec", pipeline / "synth.json", "--seed", seed, "--out", out) == 0
    ma = jsonio.read_json(a / "manifest_synth.json")
    mb = jsonio.read_json(b / "manifest_synth.json")
    assert ma["config"]["seed"] != mb["config"]["seed"]
    assert ma["outputs"]["dataset.csv"] != mb["outputs"]["dataset.csv"]


def test_crossval_compare_explain_ablate_report(pipeline):
    r = pipeline
    assert _run("crossval", "--data", r / "p/train.csv", "--model", "rf", "--model", "et",
                "--folds", 3, "--seed", 1, "--out", r / "cv") == 0
    fs = jsonio.read_json(r / "cv/fold_scores.json")
    assert len(fs["models"]) == 2
    assert _run("compare", "--scores", r / "cv/fold_scores.json", "--data", r / "p/test.csv",
                "--models", r / "m/models/rf.json", r / "m/models/et.json", "--seed", 1,
                "--out", r / "cmp") == 0
    assert (r / "cmp/table7.csv").exists() and (r / "cmp/comparison.json").exists()
    cfg = r / "explain.json"
    cfg.write_text(json.dumps({"seed": 1, "out": str(r / "x"),
                               "explain": {"permutation_repeats": 2, "max_rows": 20,
                                           "lime_samples": 200}}))
    assert _run("explain", "--config", cfg, "--data", r / "p/test.csv",
                "--models", r / "m/models/rf.json", "--instance", 3,
                "--recipe", r / "p/recipe.json") == 0
    for name in ("table4_rf.csv", "shap_local_rf.json", "force_rf_3.svg", "lime_rf.json",
                 "shap_rf_class0.svg"):
        assert (r / "x" / name).exists()
    assert _run("ablate", "--data", r / "p/train.csv", "--model", "rf", "--subset-sizes", 2,
                "--exclude", "cat=cat", "--folds", 2, "--seed", 1, "--out", r / "ab") == 0
    assert jsonio.read_json(r / "ab/ablation.json")["rows"][0]["delta"] == 0.0
    for d in ("e", "cmp", "x"):
        for f in (r / d).glob("*.json"):
            (r / "all" / f.name).parent.mkdir(exist_ok=True)
            (r / "all" / f.name).write_bytes(f.read_bytes())
    assert _run("report", "--inputs", r / "all", "--seed", 1, "--out", r / "rep") == 0
    assert (r / "rep/table1.csv").exists() and (r / "rep/table7.csv").exists()


def test_contingency_mcnemar(tmp_path):
    p = tmp_path / "c.csv"
    p.write_text(",B correct,B wrong\nA correct,60304,3\nA wrong,1,22\n")
    assert _run("compare", "--contingency", p, "--seed", 0, "--out", tmp_path / "o") == 0
    res = jsonio.read_json(tmp_path / "o/mcnemar.json")
    assert res["chi2"] == pytest.approx(0.25, abs=1e-12)
    assert res["p"] == pytest.approx(0.617075, abs=1e-6)


def test_usage_errors_exit_2(tmp_path, capsys):
    assert _run("synth", "--out", tmp_path) == 2  # seed missing
    assert "error: UsageError" in capsys.readouterr().err
    with pytest.raises(SystemExit) as e:
        _run("train", "--bogus-flag")
    assert e.value.code == 2
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"seed": 1, "out": str(tmp_path), "colour": "red"}))
    assert _run("synth", "--config", cfg) == 2
    assert "ConfigError" in capsys.readouterr().err
    assert _run("train", "--seed", 1, "--out", tmp_path) == 2


def test_runtime_errors_exit_1(tmp_path, capsys):
    assert _run("preprocess", "--data", tmp_path / "missing.csv", "--seed", 1,
                "--out", tmp_path) == 1
    err = capsys.readouterr().err.strip().splitlines()
    assert len(err) == 1 and err[0].startswith("error: ")
    bad = tmp_path / "c.csv"
    bad.write_text("1,2,3\n")
    assert _run("compare", "--contingency", bad, "--seed", 0, "--out", tmp_path) == 1


def test_module_entry_point():
    out = subprocess.run([sys.executable, "-m", "uavids", "--version"], capture_output=True,
                         text=True)
    assert out.returncode == 0 and out.stdout.startswith("uavids ")
