import warnings

import numpy as np
import pytest
from hypothesis import given, strategies as st

import oracles as O
from uavids.errors import InvalidLabel, InvalidProbabilities, SkippedClass, ZeroDivisionConvention
from uavids.metrics import (MetricsReport, accuracy, binary_auc, brier_score, cohen_kappa,
                            confusion_matrix, evaluate_predictions, log_loss, macro_prf,
                            mcc_multiclass, roc_auc_macro, roc_curve)


def _random_case(rng):
    K = int(rng.integers(2, 6))
    N = int(rng.integers(1, 51))
    y = rng.integers(0, K, N)
    yp = rng.integers(0, K, N)
    P = rng.dirichlet(np.ones(K), N)
    if rng.random() < 0.3:
        P = np.round(P, 1)  # force ties
        P = P / P.sum(axis=1, keepdims=True)
    return K, y, yp, P


def test_hand_cases():
    cm = confusion_matrix([0, 0, 1, 1], [0, 1, 1, 1], 2)
    assert cm.tolist() == [[1, 1], [0, 2]]
    prf = macro_prf(cm)
    assert prf.precision_macro == pytest.approx(5 / 6, abs=1e-12)
    assert prf.recall_macro == 0.75 and prf.balanced_accuracy == 0.75
    assert prf.f1_macro == pytest.approx(0.7333333333333333, abs=1e-12)
    assert mcc_multiclass(cm) == pytest.approx(4 / np.sqrt(48), abs=1e-12)
    assert cohen_kappa(cm) == pytest.approx(0.5, abs=1e-12)
    assert log_loss([1], [[0.25, 0.75]]) == pytest.approx(-np.log(0.75), abs=1e-12)
    assert brier_score([1], [[0.25, 0.75]]) == pytest.approx(0.125, abs=1e-12)
    assert binary_auc([0.9, 0.3, 0.4, 0.2], [True, True, False, False]) == 0.75
    assert binary_auc([0.9, 0.8, 0.4, 0.7], [True, True, False, False]) == 1.0
    assert binary_auc([0.5] * 4, [True, False, True, False]) == 0.5


def test_closed_forms():
    assert log_loss([0, 1], [[0.5, 0.5], [0.5, 0.5]]) == pytest.approx(np.log(2))
    assert brier_score([0, 1], [[0.5, 0.5], [0.5, 0.5]]) == pytest.approx(0.5)
    assert log_loss([0, 1], [[1.0, 0.0], [0.0, 1.0]]) <= 1e-14
    assert brier_score([0, 1], [[1.0, 0.0], [0.0, 1.0]]) == 0.0


def test_confusion_edge_cases():
    assert confusion_matrix([], [], 3).sum() == 0
    assert np.array_equal(confusion_matrix([0, 1, 1], [0, 1, 1], 2), np.diag([1, 2]))
    with pytest.raises(InvalidLabel):
        confusion_matrix([0, 2], [0, 1], 2)


def test_degenerate_conventions_warn():
    cm = confusion_matrix([0, 1], [0, 0], 2)
    with pytest.warns(ZeroDivisionConvention):
        assert mcc_multiclass(cm) == 0.0
    with pytest.warns(ZeroDivisionConvention):
        assert macro_prf(cm).per_class[1].precision == 0.0
    with pytest.warns(ZeroDivisionConvention):
        assert cohen_kappa(confusion_matrix([0, 0], [0, 0], 2)) == 0.0


def test_invalid_probabilities():
    with pytest.raises(InvalidProbabilities):
        log_loss([0], [[0.5, 0.6]])
    with pytest.raises(InvalidProbabilities):
        brier_score([0, 1], [[1.0, 0.0]])


def test_oracle_suite_1000_cases():
    rng = np.random.default_rng(2024)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        for _ in range(1000):
            K, y, yp, P = _random_case(rng)
            cm = confusion_matrix(y, yp, K)
            assert cm.tolist() == O.confusion(y.tolist(), yp.tolist(), K)
            prf = macro_prf(cm)
            p, r, f = O.prf(y.tolist(), yp.tolist(), K)
            assert abs(prf.precision_macro - p) <= 1e-12
            assert abs(prf.recall_macro - r) <= 1e-12
            assert abs(prf.f1_macro - f) <= 1e-12
            assert prf.balanced_accuracy == prf.recall_macro
            assert abs(accuracy(cm) - O.accuracy(y, yp)) <= 1e-12
            assert abs(mcc_multiclass(cm) - O.mcc(y.tolist(), yp.tolist(), K)) <= 1e-12
            assert abs(cohen_kappa(cm) - O.kappa(y.tolist(), yp.tolist(), K)) <= 1e-12
            assert abs(log_loss(y, P) - O.log_loss(y.tolist(), P.tolist())) <= 1e-12
            assert abs(brier_score(y, P) - O.brier(y.tolist(), P.tolist())) <= 1e-12
            ref = O.auc_macro(y.tolist(), P.tolist(), K)
            got = roc_auc_macro(y, P).auc_macro
            assert (np.isnan(ref) and np.isnan(got)) or abs(got - ref) <= 1e-12


@given(st.integers(0, 2**32 - 1))
def test_auc_equals_trapezoid_area(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 40))
    s = np.round(rng.random(n), int(rng.integers(1, 4)))
    pos = rng.random(n) < 0.5
    if pos.all() or not pos.any():
        return
    fpr, tpr = roc_curve(s, pos)
    assert fpr[0] == 0 and tpr[0] == 0 and fpr[-1] == 1 and tpr[-1] == 1
    assert np.all(np.diff(fpr) >= 0) and np.all(np.diff(tpr) >= 0)
    area = float(np.sum(np.diff(fpr) * (tpr[1:] + tpr[:-1]) / 2))
    assert abs(area - binary_auc(s, pos)) <= 1e-12


@given(st.integers(0, 2**32 - 1))
def test_label_permutation_equivariance(seed):
    rng = np.random.default_rng(seed)
    K, y, _, _ = _random_case(rng)
    P = rng.dirichlet(np.ones(K), len(y))  # continuous, so argmax has no ties
    perm = rng.permutation(K)
    y2 = perm[y]
    P2 = np.empty_like(P)
    P2[:, perm] = P
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        a, b = evaluate_predictions(y, P), evaluate_predictions(y2, P2)
    for k in ("accuracy", "precision_macro", "recall_macro", "f1_macro", "mcc", "cohen_kappa",
              "log_loss", "brier_score"):
        assert abs(getattr(a, k) - getattr(b, k)) <= 1e-12, k
    if not np.isnan(a.roc_auc_macro):
        assert abs(a.roc_auc_macro - b.roc_auc_macro) <= 1e-12


@given(st.integers(0, 2**32 - 1))
def test_fixing_a_prediction_never_lowers_accuracy(seed):
    rng = np.random.default_rng(seed)
    K, y, yp, _ = _random_case(rng)
    wrong = np.flatnonzero(yp != y)
    if not len(wrong):
        return
    fixed = yp.copy()
    fixed[wrong[0]] = y[wrong[0]]
    assert accuracy(confusion_matrix(y, fixed, K)) >= accuracy(confusion_matrix(y, yp, K))


@given(st.integers(0, 2**32 - 1))
def test_metric_ranges(seed):
    rng = np.random.default_rng(seed)
    K, y, _, P = _random_case(rng)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        r = evaluate_predictions(y, P)
    for k in ("accuracy", "precision_macro", "recall_macro", "f1_macro", "balanced_accuracy"):
        assert 0.0 <= getattr(r, k) <= 1.0
    assert -1.0 <= r.mcc <= 1.0 and -1.0 <= r.cohen_kappa <= 1.0
    assert 0.0 <= r.brier_score <= 2.0
    assert r.confusion.sum() == len(y)


def test_roc_skips_absent_class():
    P = np.array([[0.7, 0.2, 0.1], [0.3, 0.6, 0.1]])
    with pytest.warns(SkippedClass):
        r = roc_auc_macro([0, 1], P)
    assert r.skipped == [2] and set(r.per_class) == {0, 1}


def test_kappa_near_zero_for_random_predictions():
    rng = np.random.default_rng(0)
    y, yp = rng.integers(0, 3, 10000), rng.integers(0, 3, 10000)
    assert abs(cohen_kappa(confusion_matrix(y, yp, 3))) <= 0.1


def test_random_predictor_accuracy_near_max_prior():
    rng = np.random.default_rng(1)
    y = rng.choice(3, 10000, p=[0.6, 0.3, 0.1])
    P = np.tile([0.5, 0.3, 0.2], (10000, 1)) + rng.normal(0, 1e-3, (10000, 3))
    P = np.abs(P)
    P /= P.sum(axis=1, keepdims=True)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        assert abs(evaluate_predictions(y, P).accuracy - 0.6) <= 0.05


def test_report_round_trip_and_table2():
    rng = np.random.default_rng(3)
    y = rng.integers(0, 3, 60)
    P = rng.dirichlet(np.ones(3), 60)
    r = evaluate_predictions(y, P, ("a", "b", "c"), "M")
    back = MetricsReport.from_json(r.to_json())
    assert back.scalars() == r.scalars()
    assert np.array_equal(back.confusion, r.confusion)
    rows = r.table2_rows()
    assert [row[0] for row in rows] == ["a", "b", "c", "Accuracy", "Macro Avg", "Weighted Avg"]
    assert rows[-2][3] == r.f1_macro and rows[-1][4] == 60


def test_separable_forest_report(separable_table):
    from uavids.ensembles import fit_random_forest
    from uavids.metrics import evaluate_model
    from uavids.preprocess import stratified_split
    tr, te = stratified_split(separable_table, 0.8, 0)
    r = evaluate_model(fit_random_forest(tr, T=50, seed=0), te)
    assert r.accuracy >= 0.99 and r.roc_auc_macro >= 0.999
    assert r.balanced_accuracy == r.recall_macro
