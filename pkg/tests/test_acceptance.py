"""Acceptance suite: one PASS/FAIL verdict per criterion, printed in the terminal summary."""
import json
import time
import warnings

import numpy as np
import pytest

import oracles as O
from conftest import IMBALANCED_WEIGHTS
from test_explain import random_tree
from uavids.ensembles import ModelSpec, fit_model, model_to_json, softmax_loss_grad
from uavids.explain import ablation_study, brute_shapley_oracle, tree_shap, tree_shap_single, tree_value_fn
from uavids.ingest import LABEL_COLUMN, infer_schema, synthesize_dataset
from uavids.metrics import (binary_auc, brier_score, cohen_kappa, confusion_matrix,
                            evaluate_model, evaluate_predictions, log_loss, mcc_multiclass,
                            roc_auc_macro)
from uavids.preprocess import apply_recipe, fit_recipe, stratified_indices
from uavids.statcompare import (FoldScores, McNemarTable, friedman_test, holm_adjust,
                                mcnemar_from_table, wilcoxon_signed_rank)

E2E_SPEC = dict(n_rows=5000, n_numeric=20, n_categorical=2, n_classes=10,
                class_weights=IMBALANCED_WEIGHTS, separability=1.0, missing_fraction=0.01)


def _prepared(spec, seed):
    """Raw synthetic table split 80/20, recipe fitted on the training rows only."""
    raw, lm = synthesize_dataset(spec, seed)
    schema = infer_schema(raw, exclude=(LABEL_COLUMN,))
    y = lm.encode(raw[LABEL_COLUMN])
    tr, te = stratified_indices(y, 0.8, seed, lm)
    recipe = fit_recipe(raw.take(tr), schema, LABEL_COLUMN, lm)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return raw, y, tr, te, recipe, apply_recipe(recipe, raw.take(tr)), apply_recipe(recipe, raw.take(te))


@pytest.fixture(scope="module")
def e2e():
    return _prepared(E2E_SPEC, 7)


def test_criterion_1_statistical_exactness(criterion):
    t0 = time.perf_counter()
    mc = mcnemar_from_table(McNemarTable(60304, 3, 1, 22))
    w = wilcoxon_signed_rank([0.91, 0.92, 0.93, 0.94, 0.95], [0.90, 0.90, 0.90, 0.90, 0.90])
    holm = holm_adjust([0.03125, 0.03125, 0.03125, 0.15625])
    S = np.array([[0.99 - 0.01 * j] * 5 for j in range(5)]) + np.arange(5) * 1e-4
    fr = friedman_test(FoldScores([f"m{j}" for j in range(5)], S))
    elapsed = time.perf_counter() - t0
    checks = [abs(mc.statistic - 0.25) <= 1e-6, abs(mc.pvalue - 0.617075) <= 1e-6,
              w.pvalue == 0.03125, holm == [0.125, 0.125, 0.125, 0.15625],
              abs(fr.statistic - 20.0) <= 1e-9, fr.df == 4, elapsed < 1.0]
    ok = criterion(1, all(checks), f"chi2={mc.statistic:.4f} p={mc.pvalue:.6f} wilcoxon={w.pvalue} "
                   f"holm={holm} friedman={fr.statistic:.9f} df={fr.df} ({elapsed:.3f}s)")
    assert ok


def test_criterion_2_metric_oracles(criterion):
    t0 = time.perf_counter()
    rng = np.random.default_rng(1234)
    worst = 0.0
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        for _ in range(1000):
            K = int(rng.integers(2, 6))
            N = int(rng.integers(1, 51))
            y, yp = rng.integers(0, K, N), rng.integers(0, K, N)
            P = rng.dirichlet(np.ones(K), N)
            cm = confusion_matrix(y, yp, K)
            r = evaluate_predictions(y, P)  # labels come from the argmax of P
            yl = P.argmax(axis=1)
            p, rc, f = O.prf(y.tolist(), yl.tolist(), K)
            diffs = [r.precision_macro - p, r.recall_macro - rc, r.f1_macro - f,
                     r.balanced_accuracy - rc, r.accuracy - O.accuracy(y, yl),
                     r.mcc - O.mcc(y.tolist(), yl.tolist(), K),
                     r.cohen_kappa - O.kappa(y.tolist(), yl.tolist(), K),
                     r.log_loss - O.log_loss(y.tolist(), P.tolist()),
                     r.brier_score - O.brier(y.tolist(), P.tolist()),
                     mcc_multiclass(cm) - O.mcc(y.tolist(), yp.tolist(), K),
                     cohen_kappa(cm) - O.kappa(y.tolist(), yp.tolist(), K)]
            ref = O.auc_macro(y.tolist(), P.tolist(), K)
            got = roc_auc_macro(y, P).auc_macro
            if not (np.isnan(ref) and np.isnan(got)):
                diffs.append(got - ref)
            worst = max(worst, max(abs(d) for d in diffs))
    cm = confusion_matrix([0, 0, 1, 1], [0, 1, 1, 1], 2)
    hand = [round(mcc_multiclass(cm), 5) == 0.57735, cohen_kappa(cm) == 0.5,
            round(log_loss([1], [[0.25, 0.75]]), 6) == 0.287682,
            brier_score([1], [[0.25, 0.75]]) == 0.125,
            binary_auc([0.9, 0.3, 0.4, 0.2], [True, True, False, False]) == 0.75]
    elapsed = time.perf_counter() - t0
    ok = criterion(2, worst <= 1e-12 and all(hand) and elapsed < 10,
                   f"1000 cases, max deviation {worst:.2e}, hand cases {sum(hand)}/5 ({elapsed:.2f}s)")
    assert ok


def test_criterion_3_shap(criterion, small_table):
    t0 = time.perf_counter()
    worst = 0.0
    for seed in range(200):
        rng = np.random.default_rng(10_000 + seed)
        d = int(rng.integers(1, 11))
        t = random_tree(rng, d, int(rng.integers(1, 5)))
        x = rng.normal(size=d)
        phi, _ = tree_shap_single(t, x)
        worst = max(worst, float(np.max(np.abs(phi[:, 0] - brute_shapley_oracle(tree_value_fn(t, x), d)))))
    m = fit_model(ModelSpec("rf", {"n_estimators": 100}), small_table, seed=0)
    eff = max(tree_shap(m, small_table.X[i], i).efficiency_error() for i in range(small_table.n))
    elapsed = time.perf_counter() - t0
    ok = criterion(3, worst <= 1e-9 and eff <= 1e-9 and elapsed < 60,
                   f"oracle max diff {worst:.2e} over 200 trees, efficiency max {eff:.2e} "
                   f"over {small_table.n} rows of a 100-tree forest ({elapsed:.1f}s)")
    assert ok


def test_criterion_4_gradients(criterion):
    rng = np.random.default_rng(99)
    step, worst = 1e-5, 0.0

    def rel(a, b):
        return abs(a - b) / max(abs(a), abs(b), 1e-4)
    for _ in range(100):
        K = int(rng.integers(2, 11))
        F = rng.normal(scale=2.0, size=(1, K))
        y = [int(rng.integers(0, K))]
        _, g, h = softmax_loss_grad(F, y)
        for k in range(K):
            Fp, Fm = F.copy(), F.copy()
            Fp[0, k] += step
            Fm[0, k] -= step
            lp, gp, _ = softmax_loss_grad(Fp, y)
            lm, gm, _ = softmax_loss_grad(Fm, y)
            worst = max(worst, rel((lp - lm) / (2 * step), g[0, k]),
                        rel((gp[0, k] - gm[0, k]) / (2 * step), h[0, k]))
    ok = criterion(4, worst <= 1e-6, f"max relative error {worst:.2e} over 100 cases")
    assert ok


def test_criterion_5_end_to_end(criterion, e2e):
    t0 = time.perf_counter()
    *_, train, test = e2e
    reports = {}
    for kind, params in (("rf", {}), ("et", {}), ("gbr", {}), ("ada", {"variant": "paper"})):
        m = fit_model(ModelSpec(kind, {"n_estimators": 100, **params}), train, seed=0)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            reports[kind] = evaluate_model(m, test)
    elapsed = time.perf_counter() - t0
    strong = ("rf", "et", "gbr")
    good = all(reports[k].f1_macro >= 0.95 and reports[k].roc_auc_macro >= 0.99 for k in strong)
    gap = min(reports[k].balanced_accuracy for k in strong) - reports["ada"].balanced_accuracy
    detail = " ".join(f"{k}: f1={reports[k].f1_macro:.4f} auc={reports[k].roc_auc_macro:.4f} "
                      f"bal={reports[k].balanced_accuracy:.4f};" for k in reports)
    ok = criterion(5, good and gap >= 0.2 and elapsed < 300,
                   f"{detail} gap={gap:.3f} ({elapsed:.0f}s)")
    assert ok


def test_criterion_6_pipeline_invariants(criterion, e2e, small_table):
    raw, y, tr, te, recipe, train, test = e2e
    no_missing = not np.isnan(train.X).any() and not np.isnan(test.X).any()
    num = [j for j, c in enumerate(train.categorical) if not c]
    mean_err = float(np.max(np.abs(train.X[:, num].mean(axis=0))))
    var_err = float(np.max(np.abs(train.X[:, num].var(axis=0) - 1.0)))
    frac = len(tr) / len(y)
    prop_err = max(abs(np.sum(y[tr] == k) - 0.8 * np.sum(y == k)) for k in range(10))
    fits = []
    for kind, params in (("rf", {"n_jobs": 1}), ("rf", {"n_jobs": 4}), ("et", {"n_jobs": 1}),
                         ("et", {"n_jobs": 4})):
        m = fit_model(ModelSpec(kind, {"n_estimators": 8, **params}), small_table, seed=5)
        fits.append(json.dumps(model_to_json(m), sort_keys=True))
    threads_equal = fits[0] == fits[1] and fits[2] == fits[3]
    repeat_equal = True
    for kind in ("ada", "gbr", "gbo"):
        a, b = (fit_model(ModelSpec(kind, {"n_estimators": 5}), small_table, seed=5) for _ in "ab")
        ja, jb = json.dumps(model_to_json(a)), json.dumps(model_to_json(b))
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            ra, rb = evaluate_model(a, small_table), evaluate_model(b, small_table)
        repeat_equal &= ja == jb and json.dumps(ra.to_json()) == json.dumps(rb.to_json())
    ok = criterion(6, no_missing and mean_err <= 1e-9 and var_err <= 1e-9 and prop_err <= 1
                   and threads_equal and repeat_equal,
                   f"missing-free={no_missing} |mean|<={mean_err:.1e} |var-1|<={var_err:.1e} "
                   f"train share={frac:.4f} class count error<={prop_err:.2f} "
                   f"thread-invariant={threads_equal} repeatable={repeat_equal}")
    assert ok


def test_criterion_7_ablation(criterion):
    from conftest import features_from_spec
    t = features_from_spec(dict(n_rows=2000, n_numeric=20, n_categorical=0, n_classes=10,
                                class_weights=IMBALANCED_WEIGHTS, n_informative=5, separability=1.0), 11)
    informative = [f"f{j:02d}" for j in range(5)]
    rep = ablation_study(ModelSpec("rf", {"n_estimators": 50}), t, "gini", (5,),
                         {"informative": informative}, seed=3)
    rows = {r.configuration: r for r in rep.rows}
    p = np.bincount(t.y, minlength=t.K) / t.n
    baseline = 2 * p.max() / (1 + p.max()) / t.K  # macro-F1 of always predicting the majority class
    top5, without = rows["top-5"], rows["without informative"]
    ok = criterion(7, abs(top5.delta) <= 0.01 and without.mean < baseline + 0.05,
                   f"full={rows['all features'].mean:.4f} top-5 delta={top5.delta:+.4f} "
                   f"(features {sorted(top5.features)}) without-informative={without.mean:.4f} "
                   f"< baseline {baseline:.4f} + 0.05")
    assert ok
