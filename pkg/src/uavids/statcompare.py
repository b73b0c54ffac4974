"""Cross-validated scoring and nonparametric model comparison.

Friedman over models x folds, exact (or normal-approximation) Wilcoxon
signed-rank with Holm step-down adjustment, bootstrap intervals for metric
differences on a holdout set, and McNemar's test on paired correctness.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np
from scipy.stats import chi2, norm, rankdata

from .errors import DegenerateSample, ZeroDivisionConvention
from .ingest import LABEL_COLUMN, LabelMap, RawTable, infer_schema
from .metrics import METRIC_NAMES, evaluate_predictions, score_labels
from .preprocess import (FeatureTable, apply_recipe, fit_recipe, stratified_folds)

EXACT_MAX_N = 25
DEFAULT_FOLDS = 5


@dataclass
class FoldScores:
    models: list[str]
    scores: np.ndarray  # models x folds
    metric: str = "f1_macro"
    seed: int | None = None

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=np.float64)
        if self.scores.shape[0] != len(self.models) or self.scores.shape[1] < 2:
            raise ValueError("scores must be models x folds with at least 2 folds")
        if np.isnan(self.scores).any():
            raise ValueError("fold scores contain missing cells")

    @property
    def n_folds(self) -> int:
        return self.scores.shape[1]

    def row(self, model: str) -> np.ndarray:
        return self.scores[self.models.index(model)]

    def to_json(self) -> dict:
        return {"models": list(self.models), "metric": self.metric, "seed": self.seed,
                "scores": self.scores.tolist()}

    @classmethod
    def from_json(cls, obj) -> "FoldScores":
        return cls(list(obj["models"]), np.array(obj["scores"], dtype=np.float64),
                   obj.get("metric", "f1_macro"), obj.get("seed"))


def _score(metric, y, P, K):
    if metric in ("log_loss", "brier_score", "roc_auc_macro"):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            return getattr(evaluate_predictions(y, P), metric)
    return score_labels(metric, y, np.argmax(P, axis=1), K)


def cross_validate(model_specs, data, k_folds: int = DEFAULT_FOLDS, metric: str = "f1_macro",
                   seed: int = 0, label_column: str = LABEL_COLUMN) -> FoldScores:
    """Stratified k-fold scores for each model on identical folds.

    ``data`` is a :class:`FeatureTable` or a :class:`RawTable`; with a raw
    table the preprocessing recipe is refitted on every training fold.
    """
    from .ensembles import fit_model
    if metric not in METRIC_NAMES:
        raise ValueError(f"unknown metric {metric!r}")
    specs = list(model_specs)
    if isinstance(data, RawTable):
        label_map = LabelMap.from_names(str(v) for v in data[label_column])
        y = label_map.encode(data[label_column])
        schema = infer_schema(data, exclude=(label_column,))
    else:
        label_map, y = data.label_map, data.y
    folds = stratified_folds(y, k_folds, seed, label_map)
    scores = np.empty((len(specs), k_folds))
    for f in range(k_folds):
        tr, te = np.flatnonzero(folds != f), np.flatnonzero(folds == f)
        if isinstance(data, RawTable):
            recipe = fit_recipe(data.take(tr), schema, label_column, label_map)
            train, test = apply_recipe(recipe, data.take(tr)), apply_recipe(recipe, data.take(te))
        else:
            train, test = data.take(tr), data.take(te)
        for i, spec in enumerate(specs):
            m = fit_model(spec, train, seed=seed)
            scores[i, f] = _score(metric, test.y, m.predict_proba(test.X), label_map.K)
    return FoldScores([s.name for s in specs], scores, metric, seed)


class FriedmanResult(NamedTuple):
    statistic: float
    df: int
    pvalue: float
    mean_ranks: list


def friedman_test(fs: FoldScores) -> FriedmanResult:
    """Friedman chi-square over models (treatments) and folds (blocks); rank 1 = best."""
    S = np.asarray(fs.scores, dtype=np.float64)
    k, n = S.shape
    if k < 2 or n < 2:
        raise ValueError("need at least 2 models and 2 folds")
    ranks = np.vstack([rankdata(-S[:, j]) for j in range(n)]).T  # k x n
    rbar = ranks.mean(axis=1)
    stat = 12.0 * n / (k * (k + 1)) * float(np.sum((rbar - (k + 1) / 2.0) ** 2))
    return FriedmanResult(stat, k - 1, float(chi2.sf(stat, k - 1)), rbar.tolist())


class WilcoxonResult(NamedTuple):
    statistic: float  # W+, the rank sum of positive differences
    pvalue: float
    n: int
    method: str
    degenerate: bool = False


def _signed_rank_counts(ranks2: np.ndarray) -> np.ndarray:
    """Number of sign patterns giving each doubled positive-rank sum."""
    total = int(ranks2.sum())
    dist = np.zeros(total + 1, dtype=np.int64)
    dist[0] = 1
    for r in ranks2:
        r = int(r)
        nxt = dist.copy()
        nxt[r:] += dist[:len(dist) - r]
        dist = nxt
    return dist


def wilcoxon_signed_rank(a, b, alternative: str = "greater") -> WilcoxonResult:
    """Paired signed-rank test of ``a - b``; exact for n <= 25 nonzero differences.

    Zero differences are dropped and tied magnitudes get average ranks.
    ``alternative`` is ``"greater"`` (a tends to exceed b), ``"less"`` or
    ``"two_sided"``.
    """
    if alternative not in ("greater", "less", "two_sided"):
        raise ValueError(f"unknown alternative {alternative!r}")
    d = np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64)
    d = d[d != 0]
    n = len(d)
    if n == 0:
        warnings.warn("all paired differences are zero; reporting p = 1", DegenerateSample,
                      stacklevel=2)
        return WilcoxonResult(0.0, 1.0, 0, "exact", True)
    ranks = rankdata(np.abs(d))
    w_plus = float(ranks[d > 0].sum())
    if n <= EXACT_MAX_N:
        r2 = np.rint(2 * ranks).astype(np.int64)  # average ranks are multiples of 1/2
        dist = _signed_rank_counts(r2)
        w2 = int(r2[d > 0].sum())
        total = float(2 ** n)
        p_ge = dist[w2:].sum() / total
        p_le = dist[:w2 + 1].sum() / total
        method = "exact"
    else:
        _, t = np.unique(np.abs(d), return_counts=True)
        mean = n * (n + 1) / 4.0
        var = n * (n + 1) * (2 * n + 1) / 24.0 - np.sum(t ** 3 - t) / 48.0
        z = (w_plus - mean) / np.sqrt(var)
        p_ge, p_le = float(norm.sf(z)), float(norm.cdf(z))
        method = "normal"
    if alternative == "greater":
        p = p_ge
    elif alternative == "less":
        p = p_le
    else:
        p = min(1.0, 2.0 * min(p_ge, p_le))
    return WilcoxonResult(w_plus, float(p), n, method)


def holm_adjust(p_raw: Sequence[float]) -> list[float]:
    p = np.asarray(p_raw, dtype=np.float64)
    m = len(p)
    if m == 0:
        raise ValueError("need at least one p-value")
    order = np.argsort(p, kind="stable")
    adj = np.minimum(1.0, np.maximum.accumulate((m - np.arange(m)) * p[order]))
    out = np.empty(m)
    out[order] = adj
    return out.tolist()


class BootstrapResult(NamedTuple):
    mean_diff: float
    ci_low: float
    ci_high: float
    iterations: int
    confidence: float


def _macro_f1_batch(cms: np.ndarray) -> np.ndarray:
    tp = np.diagonal(cms, axis1=1, axis2=2).astype(np.float64)
    pred = cms.sum(axis=1).astype(np.float64)
    act = cms.sum(axis=2).astype(np.float64)
    P = np.divide(tp, pred, out=np.zeros_like(tp), where=pred > 0)
    R = np.divide(tp, act, out=np.zeros_like(tp), where=act > 0)
    F = np.divide(2 * P * R, P + R, out=np.zeros_like(tp), where=(P + R) > 0)
    return F.mean(axis=1)


def _batch_metric(metric, y, p, idx, K):
    c, n = idx.shape
    yy, pp = y[idx], p[idx]
    if metric == "accuracy":
        return (yy == pp).mean(axis=1)
    if metric == "f1_macro":
        codes = (np.arange(c)[:, None] * K * K + yy * K + pp).ravel()
        cms = np.bincount(codes, minlength=c * K * K).reshape(c, K, K)
        return _macro_f1_batch(cms)
    return np.array([score_labels(metric, yy[i], pp[i], K) for i in range(c)])


BOOTSTRAP_CHUNK = 256


def bootstrap_diff_ci(pred_a, pred_b, y_true, metric: str = "f1_macro",
                      iterations: int = 20000, confidence: float = 0.95, seed: int = 0,
                      K: int | None = None) -> BootstrapResult:
    """Percentile interval of metric(A) - metric(B) over row resamples of the holdout set."""
    if iterations < 1000:
        raise ValueError("use at least 1000 bootstrap iterations")
    if not 0.0 < confidence < 1.0:
        raise ValueError("confidence must lie in (0, 1)")
    y = np.asarray(y_true, dtype=np.int64)
    a = np.asarray(pred_a, dtype=np.int64)
    b = np.asarray(pred_b, dtype=np.int64)
    if not len(y) == len(a) == len(b):
        raise ValueError("prediction vectors must align with y_true")
    K = K or int(max(y.max(), a.max(), b.max())) + 1
    rng = np.random.default_rng(seed)
    n = len(y)
    diffs = np.empty(iterations)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ZeroDivisionConvention)
        for start in range(0, iterations, BOOTSTRAP_CHUNK):
            c = min(BOOTSTRAP_CHUNK, iterations - start)
            idx = rng.integers(0, n, size=(c, n))
            diffs[start:start + c] = (_batch_metric(metric, y, a, idx, K)
                                      - _batch_metric(metric, y, b, idx, K))
    alpha = 1.0 - confidence
    lo, hi = np.percentile(diffs, [100 * alpha / 2, 100 * (1 - alpha / 2)])
    return BootstrapResult(float(diffs.mean()), float(lo), float(hi), iterations, confidence)


@dataclass(frozen=True)
class McNemarTable:
    both_correct: int
    a_correct_b_wrong: int
    a_wrong_b_correct: int
    both_wrong: int

    @property
    def total(self) -> int:
        return self.both_correct + self.a_correct_b_wrong + self.a_wrong_b_correct + self.both_wrong

    def as_matrix(self) -> list[list[int]]:
        return [[self.both_correct, self.a_correct_b_wrong],
                [self.a_wrong_b_correct, self.both_wrong]]


class McNemarResult(NamedTuple):
    table: McNemarTable
    statistic: float
    pvalue: float


def mcnemar_from_table(table: McNemarTable) -> McNemarResult:
    """Continuity-corrected McNemar chi-square on the discordant counts."""
    b, c = table.a_correct_b_wrong, table.a_wrong_b_correct
    if b + c == 0:
        return McNemarResult(table, 0.0, 1.0)
    stat = (abs(b - c) - 1.0) ** 2 / (b + c)
    return McNemarResult(table, float(stat), float(chi2.sf(stat, 1)))


def mcnemar_test(y_true, pred_a, pred_b) -> McNemarResult:
    y = np.asarray(y_true)
    ca = np.asarray(pred_a) == y
    cb = np.asarray(pred_b) == y
    table = McNemarTable(int(np.sum(ca & cb)), int(np.sum(ca & ~cb)),
                         int(np.sum(~ca & cb)), int(np.sum(~ca & ~cb)))
    return mcnemar_from_table(table)


# -- report --------------------------------------------------------------------------

@dataclass
class PairwiseRow:
    reference: str
    other: str
    p_raw: float
    p_holm: float
    mean_reference: float
    mean_other: float
    mean_diff: float | None = None
    ci_low: float | None = None
    ci_high: float | None = None


@dataclass
class ComparisonReport:
    fold_scores: FoldScores
    friedman: FriedmanResult
    pairwise: list[PairwiseRow]
    mcnemar: McNemarResult | None = None
    mcnemar_pair: tuple[str, str] | None = None
    meta: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        mc = None
        if self.mcnemar is not None:
            t = self.mcnemar.table
            mc = {"pair": list(self.mcnemar_pair or ("A", "B")),
                  "table": {"both_correct": t.both_correct, "a_correct_b_wrong": t.a_correct_b_wrong,
                            "a_wrong_b_correct": t.a_wrong_b_correct, "both_wrong": t.both_wrong},
                  "chi2": self.mcnemar.statistic, "p": self.mcnemar.pvalue}
        return {
            "fold_scores": self.fold_scores.to_json(),
            "friedman": {"statistic": self.friedman.statistic, "df": self.friedman.df,
                         "p": self.friedman.pvalue, "mean_ranks": self.friedman.mean_ranks},
            "pairwise": [vars(r) for r in self.pairwise],
            "mcnemar": mc,
            "meta": self.meta,
        }

    def table7_rows(self):
        return [[f"{r.reference} > {r.other}", r.p_raw, r.p_holm, r.mean_reference, r.mean_other]
                for r in self.pairwise]

    def table8_rows(self):
        return [[f"{r.reference} - {r.other}", r.mean_diff, r.ci_low, r.ci_high]
                for r in self.pairwise if r.mean_diff is not None]


TABLE7_HEADER = ["Comparison", "Raw p-value", "Holm-adjusted p-value", "Mean reference",
                 "Mean other"]
TABLE8_HEADER = ["Comparison", "Mean diff", "95% CI low", "95% CI high"]


def mcnemar_csv_rows(res: McNemarResult, pair=("A", "B")):
    a, b = pair
    t = res.table
    table9 = [["Contingency Table", f"{b} Correct", f"{b} Wrong"],
              [f"{a} Correct", t.both_correct, t.a_correct_b_wrong],
              [f"{a} Wrong", t.a_wrong_b_correct, t.both_wrong]]
    table10 = [["Test", "chi2", "p-value"], ["McNemar Test", res.statistic, res.pvalue]]
    return table9, table10


def compare_models(fs: FoldScores, reference: str | None = None, holdout: dict | None = None,
                   y_holdout=None, bootstrap_iterations: int = 20000, confidence: float = 0.95,
                   seed: int = 0, alternative: str = "greater",
                   mcnemar_pair: tuple[str, str] | None = None) -> ComparisonReport:
    """Run the full battery with ``reference`` (default: best mean fold score) against the rest.

    ``holdout`` maps model name -> predicted labels on a common holdout set
    with true labels ``y_holdout``; it enables bootstrap intervals and McNemar.
    """
    means = fs.scores.mean(axis=1)
    if reference is None:
        reference = fs.models[int(np.argmax(means))]
    others = [m for m in fs.models if m != reference]
    raw = [wilcoxon_signed_rank(fs.row(reference), fs.row(o), alternative).pvalue for o in others]
    adj = holm_adjust(raw) if raw else []
    rows = []
    for o, p, q in zip(others, raw, adj):
        row = PairwiseRow(reference, o, p, q, float(fs.row(reference).mean()), float(fs.row(o).mean()))
        if holdout is not None and reference in holdout and o in holdout:
            bs = bootstrap_diff_ci(holdout[reference], holdout[o], y_holdout, fs.metric
                                   if fs.metric in ("f1_macro", "accuracy") else "f1_macro",
                                   bootstrap_iterations, confidence, seed)
            row.mean_diff, row.ci_low, row.ci_high = bs.mean_diff, bs.ci_low, bs.ci_high
        rows.append(row)
    mc = None
    if holdout is not None and others:
        if mcnemar_pair is None:
            runner_up = max(others, key=lambda o: fs.row(o).mean())
            mcnemar_pair = (reference, runner_up)
        a, b = mcnemar_pair
        if a in holdout and b in holdout:
            mc = mcnemar_test(y_holdout, holdout[a], holdout[b])
    meta = {"k_folds": fs.n_folds, "metric": fs.metric, "alternative": alternative,
            "reference": reference, "bootstrap_iterations": bootstrap_iterations,
            "confidence": confidence, "seed": seed,
            "k_folds_note": "5 folds: the smallest exact one-sided Wilcoxon p for n=5 is 2^-5"}
    return ComparisonReport(fs, friedman_test(fs), rows, mc, mcnemar_pair if mc else None, meta)
