"""Multi-class evaluation metrics, confusion matrix, per-class report and ROC curves.

Zero denominators follow the usual toolchain conventions (precision of a
never-predicted class is 0, degenerate MCC and kappa are 0) and emit a
:class:`~uavids.errors.ZeroDivisionConvention` warning.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy.stats import rankdata

from .errors import InvalidLabel, InvalidProbabilities, SkippedClass, ZeroDivisionConvention

PROB_CLIP = 1e-15


def confusion_matrix(y, y_pred, K: int) -> np.ndarray:
    """``M[actual, predicted]`` counts."""
    y = np.asarray(y, dtype=np.int64)
    p = np.asarray(y_pred, dtype=np.int64)
    if len(y) != len(p):
        raise InvalidLabel("label vectors differ in length")
    for v in (y, p):
        if len(v) and (v.min() < 0 or v.max() >= K):
            raise InvalidLabel(f"labels must lie in 0..{K - 1}")
    return np.bincount(y * K + p, minlength=K * K).reshape(K, K)


class ClassReport(NamedTuple):
    precision: float
    recall: float
    f1: float
    support: int


class MacroPRF(NamedTuple):
    precision_macro: float
    recall_macro: float
    f1_macro: float
    balanced_accuracy: float
    per_class: list


def _per_class(cm):
    cm = np.asarray(cm, dtype=np.float64)
    tp = np.diag(cm)
    pred = cm.sum(axis=0)
    actual = cm.sum(axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        P = np.where(pred > 0, tp / np.where(pred > 0, pred, 1), 0.0)
        R = np.where(actual > 0, tp / np.where(actual > 0, actual, 1), 0.0)
        F = np.where(P + R > 0, 2 * P * R / np.where(P + R > 0, P + R, 1), 0.0)
    if np.any(pred == 0) or np.any(actual == 0):
        warnings.warn("class with no predicted or actual samples scored as 0",
                      ZeroDivisionConvention, stacklevel=3)
    return P, R, F, actual


def macro_prf(cm) -> MacroPRF:
    P, R, F, support = _per_class(cm)
    per = [ClassReport(float(p), float(r), float(f), int(s)) for p, r, f, s in zip(P, R, F, support)]
    rec = float(R.mean())
    return MacroPRF(float(P.mean()), rec, float(F.mean()), rec, per)


def accuracy(cm) -> float:
    cm = np.asarray(cm)
    return float(np.trace(cm) / cm.sum())


def mcc_multiclass(cm) -> float:
    cm = np.asarray(cm, dtype=np.float64)
    s = cm.sum()
    c = np.trace(cm)
    p = cm.sum(axis=0)
    t = cm.sum(axis=1)
    cov_pt = c * s - np.dot(p, t)
    var_p = s * s - np.dot(p, p)
    var_t = s * s - np.dot(t, t)
    if var_p == 0 or var_t == 0:
        warnings.warn("MCC undefined for a constant prediction or label; using 0",
                      ZeroDivisionConvention, stacklevel=2)
        return 0.0
    return float(cov_pt / np.sqrt(var_p * var_t))


def cohen_kappa(cm) -> float:
    cm = np.asarray(cm, dtype=np.float64)
    n = cm.sum()
    p0 = np.trace(cm) / n
    pe = np.dot(cm.sum(axis=1), cm.sum(axis=0)) / (n * n)
    if pe == 1.0:
        warnings.warn("chance agreement is 1; kappa set to 0", ZeroDivisionConvention,
                      stacklevel=2)
        return 0.0
    return float((p0 - pe) / (1.0 - pe))


def _check_probs(y, P):
    P = np.asarray(P, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if P.ndim != 2 or len(P) != len(y):
        raise InvalidProbabilities("P must be N x K aligned with y")
    if np.any(np.abs(P.sum(axis=1) - 1.0) > 1e-6) or np.any(P < -1e-12):
        raise InvalidProbabilities("probability rows must be nonnegative and sum to 1")
    if len(y) and (y.min() < 0 or y.max() >= P.shape[1]):
        raise InvalidLabel("label outside probability columns")
    return y, P


def log_loss(y, P) -> float:
    y, P = _check_probs(y, P)
    p = np.clip(P[np.arange(len(y)), y], PROB_CLIP, 1.0 - PROB_CLIP)
    return float(-np.mean(np.log(p)))


def brier_score(y, P) -> float:
    y, P = _check_probs(y, P)
    onehot = np.zeros_like(P)
    onehot[np.arange(len(y)), y] = 1.0
    return float(np.mean(np.sum((P - onehot) ** 2, axis=1)))


def binary_auc(scores, positive) -> float:
    """Mann-Whitney AUC; tied scores count one half."""
    scores = np.asarray(scores, dtype=np.float64)
    positive = np.asarray(positive, dtype=bool)
    n_pos = int(positive.sum())
    n_neg = len(scores) - n_pos
    ranks = rankdata(scores)
    return float((ranks[positive].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def roc_curve(scores, positive) -> tuple[np.ndarray, np.ndarray]:
    """(FPR, TPR) at every distinct threshold, from (0, 0) to (1, 1)."""
    scores = np.asarray(scores, dtype=np.float64)
    positive = np.asarray(positive, dtype=bool)
    order = np.argsort(-scores, kind="stable")
    s, pos = scores[order], positive[order]
    tp = np.cumsum(pos)
    fp = np.cumsum(~pos)
    last = np.r_[np.flatnonzero(s[1:] != s[:-1]), len(s) - 1]
    tpr = np.r_[0.0, tp[last] / max(pos.sum(), 1)]
    fpr = np.r_[0.0, fp[last] / max((~pos).sum(), 1)]
    if fpr[-1] != 1.0 or tpr[-1] != 1.0:
        fpr, tpr = np.r_[fpr, 1.0], np.r_[tpr, 1.0]
    return fpr, tpr


class RocResult(NamedTuple):
    auc_macro: float
    per_class: dict
    curves: dict
    skipped: list


def roc_auc_macro(y, P) -> RocResult:
    """One-vs-rest AUC per class, macro-averaged over classes with both outcomes present."""
    y, P = _check_probs(y, P)
    per, curves, skipped = {}, {}, []
    for k in range(P.shape[1]):
        pos = y == k
        if pos.all() or not pos.any():
            skipped.append(k)
            continue
        per[k] = binary_auc(P[:, k], pos)
        curves[k] = roc_curve(P[:, k], pos)
    if skipped:
        warnings.warn(f"ROC AUC skipped classes {skipped} (no positives or no negatives)",
                      SkippedClass, stacklevel=2)
    macro = float(np.mean(list(per.values()))) if per else float("nan")
    return RocResult(macro, per, curves, skipped)


def argmax_labels(P) -> np.ndarray:
    return np.argmax(np.asarray(P), axis=1)  # first maximum wins ties


METRIC_NAMES = ("accuracy", "precision_macro", "recall_macro", "f1_macro", "balanced_accuracy",
                "mcc", "cohen_kappa", "log_loss", "brier_score", "roc_auc_macro")

TABLE1_COLUMNS = {
    "accuracy": "Accuracy", "precision_macro": "Precision", "recall_macro": "Recall",
    "f1_macro": "F1 Score", "balanced_accuracy": "Balanced Accuracy",
    "mcc": "Matthews Corrcoef", "cohen_kappa": "Cohen Kappa", "log_loss": "Log Loss",
    "brier_score": "Brier Score Loss", "roc_auc_macro": "ROC AUC",
}


@dataclass
class MetricsReport:
    accuracy: float
    precision_macro: float
    recall_macro: float
    f1_macro: float
    balanced_accuracy: float
    mcc: float
    cohen_kappa: float
    log_loss: float
    brier_score: float
    roc_auc_macro: float
    confusion: np.ndarray
    per_class: list
    roc_auc_per_class: dict = field(default_factory=dict)
    roc_curves: dict = field(default_factory=dict)
    class_names: tuple = ()
    model_name: str = ""

    def scalars(self) -> dict:
        return {k: getattr(self, k) for k in METRIC_NAMES}

    def to_json(self) -> dict:
        return {
            "model": self.model_name,
            "metrics": self.scalars(),
            "class_names": list(self.class_names),
            "confusion": self.confusion.tolist(),
            "per_class": [dict(c._asdict()) for c in self.per_class],
            "roc_auc_per_class": {str(k): v for k, v in self.roc_auc_per_class.items()},
            "roc_curves": {str(k): {"fpr": f.tolist(), "tpr": t.tolist()}
                           for k, (f, t) in self.roc_curves.items()},
        }

    @classmethod
    def from_json(cls, obj) -> "MetricsReport":
        m = obj["metrics"]
        return cls(**{k: m[k] for k in METRIC_NAMES},
                   confusion=np.array(obj["confusion"], dtype=np.int64),
                   per_class=[ClassReport(**c) for c in obj["per_class"]],
                   roc_auc_per_class={int(k): v for k, v in obj["roc_auc_per_class"].items()},
                   roc_curves={int(k): (np.array(v["fpr"]), np.array(v["tpr"]))
                               for k, v in obj["roc_curves"].items()},
                   class_names=tuple(obj["class_names"]), model_name=obj.get("model", ""))

    def table2_rows(self) -> list[list]:
        """Per-class rows followed by accuracy, macro and weighted averages."""
        rows = [[name, c.precision, c.recall, c.f1, c.support]
                for name, c in zip(self.class_names, self.per_class)]
        sup = np.array([c.support for c in self.per_class], dtype=float)
        total = int(sup.sum())
        wavg = [float(np.dot(sup, [getattr(c, f) for c in self.per_class]) / sup.sum())
                for f in ("precision", "recall", "f1")]
        rows.append(["Accuracy", "", "", self.accuracy, total])
        rows.append(["Macro Avg", self.precision_macro, self.recall_macro, self.f1_macro, total])
        rows.append(["Weighted Avg", *wavg, total])
        return rows


TABLE2_HEADER = ["Class", "Precision", "Recall", "F1-Score", "Support"]


def evaluate_predictions(y, P, class_names=(), model_name: str = "") -> MetricsReport:
    y = np.asarray(y, dtype=np.int64)
    P = np.asarray(P, dtype=np.float64)
    K = P.shape[1]
    y_pred = argmax_labels(P)
    cm = confusion_matrix(y, y_pred, K)
    prf = macro_prf(cm)
    roc = roc_auc_macro(y, P)
    return MetricsReport(
        accuracy=accuracy(cm), precision_macro=prf.precision_macro,
        recall_macro=prf.recall_macro, f1_macro=prf.f1_macro,
        balanced_accuracy=prf.balanced_accuracy, mcc=mcc_multiclass(cm),
        cohen_kappa=cohen_kappa(cm), log_loss=log_loss(y, P), brier_score=brier_score(y, P),
        roc_auc_macro=roc.auc_macro, confusion=cm, per_class=prf.per_class,
        roc_auc_per_class=roc.per_class, roc_curves=roc.curves,
        class_names=tuple(class_names) or tuple(str(k) for k in range(K)),
        model_name=model_name)


def evaluate_model(m, t, model_name: str | None = None) -> MetricsReport:
    from .ensembles import DISPLAY_NAMES, predict_proba
    P = predict_proba(m, t)
    return evaluate_predictions(t.y, P, m.label_map.names,
                                model_name or DISPLAY_NAMES.get(m.kind, m.kind))


def f1_macro_labels(y, y_pred, K: int) -> float:
    return macro_prf(confusion_matrix(y, y_pred, K)).f1_macro


def score_labels(metric: str, y, y_pred, K: int) -> float:
    """Label-only metrics used by cross-validation, bootstrap and permutation importance."""
    cm = confusion_matrix(y, y_pred, K)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ZeroDivisionConvention)
        if metric == "accuracy":
            return accuracy(cm)
        if metric == "mcc":
            return mcc_multiclass(cm)
        if metric == "cohen_kappa":
            return cohen_kappa(cm)
        prf = macro_prf(cm)
    if metric in ("f1_macro", "precision_macro", "recall_macro", "balanced_accuracy"):
        return getattr(prf, metric)
    raise ValueError(f"unknown label metric {metric!r}")
