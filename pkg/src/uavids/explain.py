"""Model explanations: permutation importance, TreeSHAP, LIME surrogates and ablation."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from itertools import combinations
from typing import Callable, Mapping, NamedTuple, Sequence

import numpy as np

from . import _backend
from .errors import ModelLacksCover, NothingLeft, SurrogateFailed, TooManyFeatures
from .metrics import score_labels
from .preprocess import FeatureTable, PreprocessRecipe, stratified_split
from .tree import Tree

ORACLE_MAX_FEATURES = 12
LIME_RIDGE = 1e-6


# -- permutation importance ------------------------------------------------------------

class ImportanceRow(NamedTuple):
    feature: str
    mean: float
    std: float


@dataclass
class ImportanceTable:
    rows: list[ImportanceRow]
    source: str = "permutation"

    def top(self, n: int) -> list[ImportanceRow]:
        return self.rows[:n]

    def names(self) -> list[str]:
        return [r.feature for r in self.rows]

    def to_json(self) -> dict:
        return {"source": self.source,
                "rows": [{"feature": r.feature, "mean": r.mean, "std": r.std} for r in self.rows]}

    @classmethod
    def from_json(cls, obj) -> "ImportanceTable":
        return cls([ImportanceRow(r["feature"], r["mean"], r["std"]) for r in obj["rows"]],
                   obj.get("source", "permutation"))


def _sorted_rows(names, means, stds) -> list[ImportanceRow]:
    order = sorted(range(len(names)), key=lambda j: (-means[j], j))
    return [ImportanceRow(names[j], float(means[j]), float(stds[j])) for j in order]


def permutation_importance(m, t: FeatureTable, metric: str = "accuracy", repeats: int = 10,
                           seed: int = 0) -> ImportanceTable:
    """Metric drop when one column is shuffled, as mean and population std over repeats.

    ``m`` only needs ``predict(X)``.  Every (feature, repeat) pair draws its
    permutation from its own generator seeded by ``(seed, feature, repeat)``.
    """
    if repeats < 1:
        raise ValueError("repeats must be >= 1")
    X, y, K = t.X, t.y, t.K
    base = score_labels(metric, y, m.predict(X), K)
    means, stds = np.zeros(t.d), np.zeros(t.d)
    for j in range(t.d):
        drops = np.empty(repeats)
        Xp = X.copy()
        for r in range(repeats):
            rng = np.random.default_rng([seed, j, r])
            Xp[:, j] = X[rng.permutation(len(y)), j]
            drops[r] = base - score_labels(metric, y, m.predict(Xp), K)
        means[j], stds[j] = drops.mean(), drops.std()
    return ImportanceTable(_sorted_rows(list(t.feature_names), means, stds), "permutation")


def gini_table(m) -> ImportanceTable:
    from .ensembles import gini_importance
    return ImportanceTable([ImportanceRow(n, v, 0.0) for n, v in gini_importance(m)], "gini")


# -- TreeSHAP -------------------------------------------------------------------------

@dataclass
class Attribution:
    """Per-class Shapley attributions of one instance.

    ``base_values[k] + phi[k].sum() == output[k]`` in ``output_space``.
    """

    instance_index: int | None
    feature_names: tuple[str, ...]
    base_values: np.ndarray  # (K,)
    phi: np.ndarray  # (K, d)
    output: np.ndarray  # (K,)
    output_space: str
    x: np.ndarray | None = None

    def efficiency_error(self) -> float:
        return float(np.max(np.abs(self.base_values + self.phi.sum(axis=1) - self.output)))

    def to_json(self) -> dict:
        return {"instance_index": self.instance_index, "output_space": self.output_space,
                "feature_names": list(self.feature_names),
                "base_values": self.base_values.tolist(), "phi": self.phi.tolist(),
                "output": self.output.tolist(),
                "x": None if self.x is None else self.x.tolist()}

    @classmethod
    def from_json(cls, obj) -> "Attribution":
        return cls(obj["instance_index"], tuple(obj["feature_names"]),
                   np.array(obj["base_values"]), np.array(obj["phi"]), np.array(obj["output"]),
                   obj["output_space"], None if obj.get("x") is None else np.array(obj["x"]))

    def csv_rows(self, class_names=None) -> list[list]:
        names = class_names or [str(k) for k in range(len(self.base_values))]
        return [[self.instance_index, names[k], f, float(self.phi[k, j])]
                for k in range(self.phi.shape[0]) for j, f in enumerate(self.feature_names)]


ATTRIBUTION_CSV_HEADER = ["instance", "class", "feature", "phi"]


def _check_cover(tree: Tree) -> None:
    c = tree.cover
    if len(c) != tree.n_nodes or not np.all(np.isfinite(c)) or not c[0] > 0:
        raise ModelLacksCover("tree nodes carry no usable cover counts")


def tree_expected_value(tree: Tree) -> np.ndarray:
    """Cover-weighted mean of the leaf values."""
    _check_cover(tree)
    leaves = tree.feature < 0
    return (tree.cover[leaves] @ tree.value[leaves]) / tree.cover[0]


def tree_shap_single(tree: Tree, x, value: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Path-dependent TreeSHAP of one tree: ``(phi (d, V), expected value (V,))``.

    ``value`` optionally replaces the tree's node values (same row count).
    """
    _check_cover(tree)
    vals = np.ascontiguousarray(tree.value if value is None else value, dtype=np.float64)
    x = np.ascontiguousarray(x, dtype=np.float64)
    if len(x) != tree.n_features:
        raise ValueError(f"expected {tree.n_features} features, got {len(x)}")
    phi = _backend.kernels().tree_shap(x, tree.feature, tree.threshold, tree.left, tree.right,
                                       vals, tree.cover, tree.depth())
    leaves = tree.feature < 0
    ev = (tree.cover[leaves] @ vals[leaves]) / tree.cover[0]
    return np.asarray(phi), ev


def _one_hot_leaves(tree: Tree) -> np.ndarray:
    v = np.zeros_like(tree.value)
    v[np.arange(tree.n_nodes), np.argmax(tree.value, axis=1)] = 1.0
    return v


def tree_shap(m, x, instance_index: int | None = None) -> Attribution:
    """Attributions of an ensemble for one feature vector in the model's output space.

    Forests: averaged class probabilities.  AdaBoost: alpha-weighted vote
    shares.  Gradient boosting: per-class logits including ``base_score``.
    Ordered-encoding columns are folded back onto their source feature.
    """
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    z = m.model_input(x.reshape(1, -1))[0]
    K, d = m.K, m.d
    phi_in = np.zeros((K, len(z)))
    base = np.zeros(K)
    if m.kind in ("random_forest", "extra_trees"):
        for t in m.trees:
            p, e = tree_shap_single(t, z)
            phi_in += p.T
            base += e
        phi_in /= len(m.trees)
        base /= len(m.trees)
    elif m.kind == "adaboost":
        total = float(np.sum(m.alphas))
        for t, a in zip(m.trees, m.alphas):
            p, e = tree_shap_single(t, z, _one_hot_leaves(t))
            phi_in += (a / total) * p.T
            base += (a / total) * e
    else:
        base = np.array(m.base_score, dtype=np.float64)
        for i, t in enumerate(m.trees):
            p, e = tree_shap_single(t, z)
            phi_in[i % K] += m.learning_rate * p[:, 0]
            base[i % K] += m.learning_rate * e[0]
    if m.encoding is not None:
        phi = np.zeros((K, d))
        for j_in, j in enumerate(m.encoding.expanded_sources(d)):
            phi[:, j] += phi_in[:, j_in]
    else:
        phi = phi_in
    out = m.raw_output(x.reshape(1, -1))[0]
    return Attribution(instance_index, tuple(m.feature_names), base, phi, out,
                       m.output_space, x)


# -- brute-force oracle -----------------------------------------------------------------

def brute_shapley_oracle(value_fn: Callable[[frozenset], float], d: int) -> np.ndarray:
    """Exact Shapley values by enumerating every coalition (``d <= 12``)."""
    if d > ORACLE_MAX_FEATURES:
        raise TooManyFeatures(f"brute-force Shapley limited to {ORACLE_MAX_FEATURES} features, got {d}")
    cache: dict[frozenset, float] = {}

    def v(s):
        if s not in cache:
            cache[s] = float(value_fn(s))
        return cache[s]

    weight = [math.factorial(s) * math.factorial(d - s - 1) / math.factorial(d) for s in range(d)]
    phi = np.zeros(d)
    for i in range(d):
        rest = [j for j in range(d) if j != i]
        for size in range(d):
            for S in combinations(rest, size):
                s = frozenset(S)
                phi[i] += weight[size] * (v(s | {i}) - v(s))
    return phi


def tree_value_fn(tree: Tree, x, out: int = 0) -> Callable[[frozenset], float]:
    """Cover-conditioned expectation of one tree output with coalition features fixed to ``x``."""
    _check_cover(tree)
    x = np.asarray(x, dtype=np.float64)

    def v(S):
        def rec(n):
            f = tree.feature[n]
            if f < 0:
                return tree.value[n, out]
            l, r = tree.left[n], tree.right[n]
            if f in S:
                return rec(l if x[f] <= tree.threshold[n] else r)
            return (tree.cover[l] * rec(l) + tree.cover[r] * rec(r)) / tree.cover[n]
        return rec(0)
    return v


# -- SHAP summaries -------------------------------------------------------------------

@dataclass
class ShapFeatureSummary:
    feature: str
    mean_abs_phi: float
    phi: np.ndarray
    value: np.ndarray  # feature values z-scored within the explained rows


@dataclass
class ShapSummary:
    class_index: int
    class_name: str
    output_space: str
    features: list[ShapFeatureSummary]
    rows: np.ndarray

    def to_json(self) -> dict:
        return {"class_index": self.class_index, "class_name": self.class_name,
                "output_space": self.output_space, "rows": self.rows.tolist(),
                "features": [{"feature": f.feature, "mean_abs_phi": f.mean_abs_phi,
                              "phi": f.phi.tolist(), "value": f.value.tolist()}
                             for f in self.features]}

    @classmethod
    def from_json(cls, obj) -> "ShapSummary":
        return cls(obj["class_index"], obj["class_name"], obj["output_space"],
                   [ShapFeatureSummary(f["feature"], f["mean_abs_phi"], np.array(f["phi"]),
                                       np.array(f["value"])) for f in obj["features"]],
                   np.array(obj["rows"], dtype=np.int64))


def explain_rows(m, X, rows) -> np.ndarray:
    """Attributions of several rows as a (rows, K, d) array."""
    return np.stack([tree_shap(m, X[i], int(i)).phi for i in rows])


def shap_summary(m, t: FeatureTable, class_k: int, top_n: int | None = None,
                 max_rows: int | None = None, seed: int = 0, phis=None) -> ShapSummary:
    """Rank features by mean |phi| for one class, keeping per-row pairs for strip plots."""
    if t.n < 1:
        raise ValueError("need at least one row")
    rows = np.arange(t.n)
    if max_rows is not None and t.n > max_rows:
        rows = np.sort(np.random.default_rng(seed).choice(t.n, max_rows, replace=False))
    P = explain_rows(m, t.X, rows) if phis is None else np.asarray(phis)
    phi = P[:, class_k, :]
    Xs = t.X[rows]
    sd = Xs.std(axis=0)
    Z = np.divide(Xs - Xs.mean(axis=0), sd, out=np.zeros_like(Xs), where=sd > 0)
    mean_abs = np.abs(phi).mean(axis=0)
    order = sorted(range(t.d), key=lambda j: (-mean_abs[j], j))[:top_n]
    feats = [ShapFeatureSummary(t.feature_names[j], float(mean_abs[j]), phi[:, j].copy(),
                                Z[:, j].copy()) for j in order]
    return ShapSummary(class_k, m.label_map.names[class_k], m.output_space, feats, rows)


def shap_table(m, t: FeatureTable, max_rows: int | None = 200, seed: int = 0) -> ImportanceTable:
    """Global importance as mean |phi| over rows and classes."""
    rows = np.arange(t.n)
    if max_rows is not None and t.n > max_rows:
        rows = np.sort(np.random.default_rng(seed).choice(t.n, max_rows, replace=False))
    A = np.abs(explain_rows(m, t.X, rows)).mean(axis=1)  # rows x d
    return ImportanceTable(_sorted_rows(list(t.feature_names), A.mean(axis=0), A.std(axis=0)), "shap")


# -- LIME ------------------------------------------------------------------------------

@dataclass
class LimeExplanation:
    class_index: int
    intercept: float
    coefficients: list[tuple[str, float]]  # top_k, by |coef * local std|
    r2: float
    kernel_width: float
    n_samples: int

    def to_json(self) -> dict:
        return {"class_index": self.class_index, "intercept": self.intercept,
                "coefficients": [[f, c] for f, c in self.coefficients], "r2": self.r2,
                "kernel_width": self.kernel_width, "n_samples": self.n_samples}


def _weighted_ridge(Z, target, w):
    ws = w / w.sum()
    zbar = ws @ Z
    tbar = float(ws @ target)
    Zc, tc = Z - zbar, target - tbar
    A = Zc.T @ (Zc * ws[:, None]) + LIME_RIDGE * np.eye(Z.shape[1])
    try:
        beta = np.linalg.solve(A, Zc.T @ (ws * tc))
    except np.linalg.LinAlgError as exc:
        raise SurrogateFailed(f"weighted least squares is singular: {exc}") from None
    if not np.all(np.isfinite(beta)):
        raise SurrogateFailed("surrogate coefficients are not finite")
    return tbar - float(zbar @ beta), beta


def lime_explain(m, x, recipe: PreprocessRecipe | None = None, n_samples: int = 5000,
                 kernel_width: float | None = None, top_k: int = 10, seed: int = 0,
                 classes: Sequence[int] | None = None,
                 feature_names: Sequence[str] | None = None) -> list[LimeExplanation]:
    """Kernel-weighted linear surrogates of ``predict_proba`` around ``x``.

    Numeric columns get unit Gaussian noise in standardized space.  When
    ``recipe`` is given, categorical columns are resampled uniformly from
    their code domain instead.
    """
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    d = len(x)
    if n_samples < d + 2:
        raise ValueError(f"n_samples must be >= d + 2 = {d + 2}")
    width = 0.75 * math.sqrt(d) if kernel_width is None else float(kernel_width)
    if not width > 0:
        raise ValueError("kernel_width must be positive")
    names = list(feature_names or (recipe.columns if recipe else [f"x{j}" for j in range(d)]))
    rng = np.random.default_rng(seed)
    Z = x + rng.standard_normal((n_samples, d))
    Z[0] = x
    if recipe is not None:
        for j, name in enumerate(names):
            cat = recipe.categorical.get(name)
            if cat is not None:
                Z[:, j] = rng.integers(0, max(1, len(cat.encoding)), size=n_samples)
                Z[0, j] = x[j]
    dist2 = np.sum((Z - x) ** 2, axis=1)
    w = np.exp(-dist2 / width ** 2)
    if not w.sum() > 0:
        raise SurrogateFailed("all perturbation weights underflow; widen the kernel")
    P = np.asarray(m.predict_proba(Z), dtype=np.float64)
    ws = w / w.sum()
    local_std = np.sqrt(ws @ (Z - ws @ Z) ** 2)
    out = []
    for k in (range(P.shape[1]) if classes is None else classes):
        target = P[:, k]
        if np.ptp(target) == 0:
            intercept, beta, r2 = float(target[0]), np.zeros(d), 1.0
        else:
            intercept, beta = _weighted_ridge(Z, target, w)
            fit = intercept + Z @ beta
            ss_res = float(ws @ (target - fit) ** 2)
            ss_tot = float(ws @ (target - ws @ target) ** 2)
            r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 0.0
            r2 = min(1.0, max(0.0, r2))
        score = np.abs(beta * local_std)
        order = sorted(range(d), key=lambda j: (-score[j], j))[:top_k]
        out.append(LimeExplanation(int(k), intercept, [(names[j], float(beta[j])) for j in order],
                                   r2, width, n_samples))
    return out


# -- ablation --------------------------------------------------------------------------

@dataclass
class AblationRow:
    configuration: str
    features: list[str]
    mean: float
    std: float
    delta: float


@dataclass
class AblationReport:
    metric: str
    importance_source: str
    ranking: list[str]
    rows: list[AblationRow]
    meta: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {"metric": self.metric, "importance_source": self.importance_source,
                "ranking": self.ranking, "meta": self.meta,
                "rows": [{"configuration": r.configuration, "n_features": len(r.features),
                          "features": r.features, "mean": r.mean, "std": r.std,
                          "delta": r.delta} for r in self.rows]}

    def csv_rows(self):
        return [[r.configuration, len(r.features), r.mean, r.std, r.delta] for r in self.rows]


ABLATION_CSV_HEADER = ["Configuration", "Features", "Mean", "Std", "Delta"]


def match_group(names: Sequence[str], patterns: Sequence[str]) -> list[str]:
    """Feature names containing any of ``patterns`` (case-insensitive)."""
    pats = [p.lower() for p in patterns]
    return [n for n in names if any(p in n.lower() for p in pats)]


def feature_ranking(spec, t: FeatureTable, source: str = "gini", seed: int = 0,
                    train_fraction: float = 0.8) -> ImportanceTable:
    """Importance ranking from a model fitted on a stratified training share of ``t``."""
    from .ensembles import fit_model
    train, test = stratified_split(t, train_fraction, seed)
    m = fit_model(spec, train, seed=seed)
    if source == "gini":
        return gini_table(m)
    if source == "permutation":
        return permutation_importance(m, test, seed=seed)
    if source == "shap":
        return shap_table(m, test, seed=seed)
    raise ValueError(f"unknown importance source {source!r}")


def ablation_study(base_spec, t: FeatureTable, importance_source: str = "gini",
                   subset_sizes: Sequence[int] = (5, 10, 15),
                   exclusion_groups: Mapping[str, Sequence[str]] | None = None,
                   seed: int = 0, k_folds: int = 5, metric: str = "f1_macro") -> AblationReport:
    """Cross-validated score of the base model on top-n subsets and with feature groups removed.

    Deltas are relative to the all-features run with the same folds and seed.
    """
    from .statcompare import cross_validate
    ranking = feature_ranking(base_spec, t, importance_source, seed).names()
    configs: list[tuple[str, list[str]]] = [("all features", list(t.feature_names))]
    for n in subset_sizes:
        if n < 1:
            raise NothingLeft(f"subset size {n} selects no features")
        configs.append((f"top-{n}", ranking[:n]))
    for group, patterns in (exclusion_groups or {}).items():
        drop = set(match_group(t.feature_names, patterns))
        configs.append((f"without {group}", [f for f in t.feature_names if f not in drop]))
    rows = []
    base_mean = None
    for label, feats in configs:
        if not feats:
            raise NothingLeft(f"configuration {label!r} leaves no features")
        keep = [f for f in t.feature_names if f in set(feats)]
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            fs = cross_validate([base_spec], t.select(keep), k_folds, metric, seed)
        s = fs.scores[0]
        if base_mean is None:
            base_mean = float(s.mean())
        rows.append(AblationRow(label, keep, float(s.mean()), float(s.std()),
                                float(s.mean()) - base_mean))
    return AblationReport(metric, importance_source, ranking, rows,
                          {"k_folds": k_folds, "seed": seed, "model": base_spec.name})
