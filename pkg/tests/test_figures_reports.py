import csv
import xml.etree.ElementTree as ET

import numpy as np
import pytest

from uavids import jsonio
from uavids.errors import DecodeError, IoFailure
from uavids.explain import ImportanceRow, ImportanceTable, tree_shap
from uavids.ensembles import ModelSpec, fit_model
from uavids.figures import confusion_svg, force_svg, importance_svg, roc_svg, shap_strip_svg
from uavids.metrics import evaluate_predictions
from uavids.reports import TABLE1_HEADER, TABLE3_HEADER, TABLE4_HEADER, table2_csv, write_report
from uavids.statcompare import FoldScores, compare_models

SVG = "{http://www.w3.org/2000/svg}"


def _report(K=10, n=400, seed=0):
    rng = np.random.default_rng(seed)
    y = np.r_[np.arange(K), rng.integers(0, K, n - K)]
    P = rng.dirichlet(np.ones(K), n)
    P[np.arange(n), y] += 1.0
    P /= P.sum(axis=1, keepdims=True)
    return evaluate_predictions(y, P, tuple(f"c{k}" for k in range(K)), "M")


def _header(path):
    with open(path, newline="") as fh:
        return next(csv.reader(fh))


def test_svgs_are_well_formed_and_byte_identical():
    r = _report()
    names = r.class_names
    for make in (lambda: confusion_svg(r.confusion, names),
                 lambda: roc_svg(r.roc_curves, r.roc_auc_per_class, names)):
        a, b = make(), make()
        assert a == b
        assert ET.fromstring(a).tag == SVG + "svg"


def test_roc_legend_has_one_entry_per_class():
    r = _report(K=10)
    root = ET.fromstring(roc_svg(r.roc_curves, r.roc_auc_per_class, r.class_names))
    assert len(root.findall(SVG + "polyline")) == 10
    assert sum("AUC =" in (t.text or "") for t in root.iter(SVG + "text")) == 10


def test_empty_importance_svg_is_valid():
    root = ET.fromstring(importance_svg([], "nothing"))
    assert root.findall(SVG + "rect")[1:] == []


def test_importance_svg_top_n_and_escaping():
    rows = [(f"f<{j}>", 1.0 / (j + 1), 0.01) for j in range(15)]
    root = ET.fromstring(importance_svg(rows, top_n=10, errors=True))
    assert len(root.findall(SVG + "rect")) == 11  # background plus ten bars
    assert any(t.text == "f<0>" for t in root.iter(SVG + "text"))


def test_shap_and_force_figures(small_table):
    from uavids.explain import shap_summary
    m = fit_model(ModelSpec("rf", {"n_estimators": 4}), small_table, seed=0)
    s = shap_summary(m, small_table, 0, top_n=5, max_rows=30)
    a = shap_strip_svg(s)
    assert a == shap_strip_svg(s) and ET.fromstring(a) is not None
    attr = tree_shap(m, small_table.X[0], 0)
    f = force_svg(attr, 1, "b", top_n=3)
    assert f == force_svg(attr, 1, "b", top_n=3) and ET.fromstring(f) is not None


def test_json_is_deterministic_and_round_trips(tmp_path):
    obj = {"b": [1.0, 0.1, float("nan")], "a": {"z": 1, "y": "s"}}
    text = jsonio.dumps(obj)
    assert text == jsonio.dumps(dict(reversed(list(obj.items()))))
    assert text.index('"a"') < text.index('"b"')
    p = jsonio.write_json(obj, tmp_path / "x.json")
    back = jsonio.read_json(p)
    assert back["b"][:2] == [1.0, 0.1] and back["b"][2] is None
    p.write_text("{bad")
    with pytest.raises(DecodeError):
        jsonio.read_json(p)


def test_unwritable_path_raises_io_failure(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(IoFailure):
        jsonio.write_json({}, blocker / "sub" / "out.json")


def test_table_csv_headers(tmp_path):
    r = _report(K=3, n=60)
    p = write_report([r, r], tmp_path / "t1.csv", "csv")[0]
    assert _header(p) == TABLE1_HEADER
    assert _header(table2_csv(r, tmp_path / "t2.csv"))[0] == "Class"
    gini = ImportanceTable([ImportanceRow("a", 0.7, 0.0), ImportanceRow("b", 0.3, 0.0)], "gini")
    perm = ImportanceTable([ImportanceRow("a", 0.2, 0.01)], "permutation")
    assert _header(write_report(gini, tmp_path / "t3.csv", "csv")[0]) == TABLE3_HEADER
    assert _header(write_report(perm, tmp_path / "t4.csv", "csv")[0]) == TABLE4_HEADER
    with pytest.raises(TypeError):
        write_report(object(), tmp_path / "x.csv", "csv")
    with pytest.raises(ValueError):
        write_report(r, tmp_path / "x.txt", "txt")


def test_comparison_report_csv_family(tmp_path):
    rng = np.random.default_rng(0)
    fs = FoldScores(["A", "B"], np.vstack([0.9 + 0.01 * rng.random(5), 0.8 + rng.random(5) / 100]))
    y = rng.integers(0, 3, 100)
    rep = compare_models(fs, holdout={"A": y, "B": (y + (rng.random(100) < 0.2)) % 3},
                         y_holdout=y, bootstrap_iterations=1000)
    paths = write_report(rep, tmp_path / "cmp.csv", "csv")
    assert sorted(p.name for p in paths) == ["cmp.csv", "cmp_bootstrap.csv", "cmp_contingency.csv",
                                             "cmp_friedman.csv", "cmp_mcnemar.csv"]
    a = (tmp_path / "cmp.csv").read_bytes()
    write_report(rep, tmp_path / "cmp.csv", "csv")
    assert (tmp_path / "cmp.csv").read_bytes() == a
    obj = jsonio.read_json(write_report(rep, tmp_path / "cmp.json")[0])
    assert obj["pairwise"][0]["other"] == "B"
