import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from uavids.errors import DecodeError, InvalidError, SchemaMismatch, UnsupportedModelVersion
from uavids.ensembles import (EnsembleModel, ModelSpec, adaboost_alpha, fit_adaboost,
                              fit_extra_trees, fit_gradient_boost, fit_model, fit_random_forest,
                              gini_importance, load_model, model_from_json, model_to_json,
                              ordered_target_stats, predict_proba, save_model, softmax,
                              softmax_loss_grad)
from uavids.ingest import LabelMap
from uavids.preprocess import FeatureTable, class_weights, stratified_split
from uavids.tree import TreeParams, grow_tree


def _split(t, seed=0):
    return stratified_split(t, 0.8, seed)


def test_random_forest_separable(separable_table):
    tr, te = _split(separable_table)
    m = fit_random_forest(tr, class_weights(tr.y, tr.K), T=100, seed=1)
    assert np.mean(m.predict(te.X) == te.y) >= 0.99


def test_extra_trees_separable(separable_table):
    tr, te = _split(separable_table)
    m = fit_extra_trees(tr, T=100, seed=1)
    assert np.mean(m.predict(te.X) == te.y) >= 0.99


def test_forest_determinism_across_thread_counts(small_table):
    a = fit_random_forest(small_table, T=12, seed=4, n_jobs=1)
    b = fit_random_forest(small_table, T=12, seed=4, n_jobs=4)
    assert json.dumps(model_to_json(a), sort_keys=True) == json.dumps(model_to_json(b), sort_keys=True)


def test_single_tree_forest_is_one_bootstrapped_tree(small_table):
    m = fit_random_forest(small_table, T=1, seed=3)
    rng = np.random.default_rng(np.random.SeedSequence(3).spawn(1)[0])
    w = np.bincount(rng.integers(0, small_table.n, small_table.n), minlength=small_table.n)
    t = grow_tree(small_table.X, small_table.y, w.astype(float), small_table.K,
                  TreeParams(), rng)
    assert np.array_equal(m.predict_proba(small_table.X), t.predict(small_table.X))


def test_extra_trees_with_best_split_and_bootstrap_equals_forest(small_table):
    p = TreeParams(split_mode="best")
    a = fit_extra_trees(small_table, T=5, params=p, seed=2, bootstrap=True)
    b = fit_random_forest(small_table, T=5, params=p, seed=2)
    assert np.array_equal(a.predict_proba(small_table.X), b.predict_proba(small_table.X))


def test_extra_trees_pure_class():
    t = FeatureTable(("a",), np.arange(6.0).reshape(-1, 1), np.zeros(6), LabelMap(("x", "y")))
    m = fit_extra_trees(t, T=1, seed=0)
    assert np.all(m.predict(np.array([[-5.0], [50.0]])) == 0)


def test_adaboost_alpha_examples():
    assert adaboost_alpha(0.5, 2, "paper") == 0.0
    assert adaboost_alpha(0.25, 2, "paper") == pytest.approx(0.5493061443340549, abs=1e-12)
    assert adaboost_alpha(0.25, 10, "samme") == pytest.approx(np.log(3) + np.log(9), abs=1e-12)
    for bad in (0.0, 1.0, -0.1):
        with pytest.raises(InvalidError):
            adaboost_alpha(bad)


def test_adaboost_separable_reaches_full_training_accuracy():
    X = np.array([[0.0], [1.0], [2.0], [3.0], [4.0], [5.0]])
    t = FeatureTable(("a",), X, np.array([0, 0, 0, 1, 1, 1]), LabelMap(("n", "p")))
    m = fit_adaboost(t, T=10, variant="paper")
    assert np.mean(m.predict(X) == t.y) == 1.0
    assert m.train_meta["rounds"] <= 10


def test_adaboost_single_round_equals_base_tree(small_table):
    m = fit_adaboost(small_table, T=1, variant="samme")
    base = grow_tree(small_table.X, small_table.y, np.full(small_table.n, 1 / small_table.n),
                     small_table.K, TreeParams(max_depth=1, feature_subset="all"),
                     np.random.default_rng(0))
    assert np.array_equal(m.predict(small_table.X), np.argmax(base.predict(small_table.X), axis=1))


def test_adaboost_paper_variant_collapses_on_many_classes(separable_table):
    from conftest import IMBALANCED_WEIGHTS, features_from_spec
    t = features_from_spec(dict(n_rows=1000, n_numeric=10, n_categorical=1, n_classes=10,
                                class_weights=IMBALANCED_WEIGHTS, separability=1.0), 2)
    tr, te = _split(t)
    m = fit_adaboost(tr, class_weights(tr.y, tr.K), T=50, variant="paper")
    pred = m.predict(te.X)
    bal = np.mean([np.mean(pred[te.y == k] == k) for k in range(10)])
    assert bal <= 0.5
    assert np.all(np.isfinite(m.alphas))


def test_ordered_target_stats_example():
    col = np.array([0, 0, 1, 0])  # A, A, B, A
    y = np.array([1, 0, 1, 1])
    enc = ordered_target_stats(col, y, np.arange(4), 0.75, a=1.0)
    assert np.allclose(enc[:, 1], [0.75, 0.875, 0.75, 0.5833333333333334], atol=1e-12)
    assert np.allclose(enc.sum(axis=1), 1.0)


@given(st.lists(st.integers(0, 3), min_size=1, max_size=30), st.integers(0, 10_000))
def test_ordered_target_stats_first_occurrence_and_prefix(col, seed):
    rng = np.random.default_rng(seed)
    col = np.array(col)
    y = rng.integers(0, 2, len(col))
    perm = rng.permutation(len(col))
    prior = np.array([0.4, 0.6])
    enc = ordered_target_stats(col, y, perm, prior, a=2.0)
    seen = {}
    for i in perm:  # naive prefix recomputation
        cnt = seen.get(col[i], np.zeros(2))
        expect = (cnt + 2.0 * prior) / (cnt.sum() + 2.0)
        assert np.allclose(enc[i], expect, atol=1e-12)
        seen[col[i]] = cnt + np.eye(2)[y[i]]
    big = ordered_target_stats(col, y, perm, prior, a=1e12)
    assert np.allclose(big, prior, atol=1e-9)


def test_softmax_grad_example():
    loss, g, h = softmax_loss_grad(np.zeros((1, 3)), [0])
    assert np.allclose(g, [[-2 / 3, 1 / 3, 1 / 3]], atol=1e-15)
    assert np.allclose(h, [[2 / 9] * 3], atol=1e-15)
    assert loss == pytest.approx(np.log(3))
    loss, g, _ = softmax_loss_grad(np.array([[50.0, 0.0, 0.0]]), [0])
    assert loss < 1e-20 and np.abs(g).max() < 1e-20


def test_softmax_rows_sum_to_one():
    F = np.random.default_rng(0).normal(scale=30, size=(50, 4))
    P = softmax(F)
    assert np.allclose(P.sum(axis=1), 1.0, atol=1e-12)


def test_gradient_boost_regularized_separable(separable_table):
    tr, te = _split(separable_table)
    m = fit_gradient_boost(tr, class_weights(tr.y, tr.K), T=30, eta=0.3, lam=1.0, gamma=0.0,
                           seed=0)
    assert np.mean(m.predict(te.X) == te.y) >= 0.99
    assert len(m.trees) == 30 * tr.K


def test_gradient_boost_ordered_separable(separable_table):
    tr, te = _split(separable_table)
    m = fit_gradient_boost(tr, T=30, mode="ordered", seed=0)
    assert m.encoding is not None
    assert np.mean(m.predict(te.X) == te.y) >= 0.99


def test_gradient_boost_eta_zero_predicts_priors(small_table):
    m = fit_gradient_boost(small_table, T=1, eta=0.0)
    priors = np.bincount(small_table.y, minlength=small_table.K) / small_table.n
    assert np.allclose(m.predict_proba(small_table.X[:5]), priors, atol=1e-12)
    with pytest.raises(ValueError):
        fit_gradient_boost(small_table, T=0)


def test_gradient_boost_loss_non_increasing(small_table):
    m = fit_gradient_boost(small_table, T=15, eta=0.1, seed=1)
    loss = np.array(m.train_meta["train_loss"])
    assert np.all(np.diff(loss) <= 1e-12)


def test_predict_proba_rows_and_schema(small_table):
    m = fit_random_forest(small_table, T=5, seed=0)
    P = predict_proba(m, small_table)
    assert np.allclose(P.sum(axis=1), 1.0, atol=1e-9) and P.min() >= 0
    with pytest.raises(SchemaMismatch):
        m.predict_proba(small_table.X[:, :2])
    wrong = FeatureTable(tuple(reversed(small_table.feature_names)), small_table.X, small_table.y,
                         small_table.label_map)
    with pytest.raises(SchemaMismatch):
        predict_proba(m, wrong)


def test_forest_of_constant_leaves():
    t = grow_tree(np.zeros((4, 1)), np.array([0, 1, 1, 1]), np.ones(4), 2)
    m = EnsembleModel("random_forest", [t, t, t], LabelMap(("a", "b")), ("f",))
    assert np.allclose(m.predict_proba(np.random.default_rng(0).normal(size=(7, 1))), [0.25, 0.75])


@pytest.mark.parametrize("kind", ["rf", "et", "ada", "gbr", "gbo"])
def test_gini_importance_normalized(kind, small_table):
    m = fit_model(ModelSpec(kind, {"n_estimators": 5}), small_table, seed=0)
    imp = dict(gini_importance(m))
    assert set(imp) == set(small_table.feature_names)
    assert sum(imp.values()) == pytest.approx(1.0, abs=1e-9)


def test_gini_importance_unused_feature_is_zero():
    rng = np.random.default_rng(0)
    X = np.c_[rng.normal(size=100), np.zeros(100)]
    y = (X[:, 0] > 0).astype(int)
    t = FeatureTable(("signal", "const"), X, y, LabelMap(("a", "b")))
    imp = dict(gini_importance(fit_random_forest(t, T=10, seed=0)))
    assert imp["const"] == 0.0 and imp["signal"] == pytest.approx(1.0)


@pytest.mark.parametrize("kind", ["rf", "et", "ada", "gbr", "gbo"])
def test_model_round_trip(kind, small_table, tmp_path):
    m = fit_model(ModelSpec(kind, {"n_estimators": 4}), small_table, seed=2)
    save_model(m, tmp_path / "m.json")
    back = load_model(tmp_path / "m.json")
    assert np.array_equal(back.predict_proba(small_table.X), m.predict_proba(small_table.X))


def test_model_io_errors(small_table, tmp_path):
    m = fit_random_forest(small_table, T=2, seed=0)
    obj = model_to_json(m)
    obj["format_version"] = 99
    with pytest.raises(UnsupportedModelVersion):
        model_from_json(obj)
    save_model(m, tmp_path / "m.json")
    text = (tmp_path / "m.json").read_text()
    (tmp_path / "t.json").write_text(text[: len(text) // 2])
    with pytest.raises(DecodeError):
        load_model(tmp_path / "t.json")
    with pytest.raises(DecodeError):
        model_from_json({"format_version": 1})


def test_model_spec_unknown_params(small_table):
    with pytest.raises(ValueError):
        fit_model(ModelSpec("rf", {"bogus": 1}), small_table)
    with pytest.raises(ValueError):
        ModelSpec("svm")


@pytest.mark.parametrize("kind", ["rf", "et", "ada", "gbr", "gbo"])
def test_fit_model_determinism(kind, small_table):
    a = fit_model(ModelSpec(kind, {"n_estimators": 4}), small_table, seed=7)
    b = fit_model(ModelSpec(kind, {"n_estimators": 4}), small_table, seed=7)
    assert json.dumps(model_to_json(a)) == json.dumps(model_to_json(b))
