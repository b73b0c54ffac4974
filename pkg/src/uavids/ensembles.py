"""The five tree ensembles: random forest, extra trees, AdaBoost and two
gradient-boosting flavours (second-order regularised, and ordered target
statistics for categorical columns)."""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Any, Optional

import numpy as np

from . import jsonio
from .errors import DecodeError, InvalidError, SchemaMismatch, UnsupportedModelVersion
from .ingest import LabelMap
from .preprocess import FeatureTable
from .tree import Tree, TreeParams, grow_gradient_tree, grow_tree

FORMAT_VERSION = 1

KINDS = ("random_forest", "extra_trees", "adaboost",
         "grad_boost_regularized", "grad_boost_ordered")
SHORT_NAMES = {"rf": "random_forest", "et": "extra_trees", "ada": "adaboost",
               "gbr": "grad_boost_regularized", "gbo": "grad_boost_ordered"}
DISPLAY_NAMES = {"random_forest": "Random Forest", "extra_trees": "Extra Trees",
                 "adaboost": "AdaBoost", "grad_boost_regularized": "Regularized Boosting",
                 "grad_boost_ordered": "Ordered Boosting"}

# a perfect weak learner keeps this error rate when forming its weight
ADABOOST_EPS_FLOOR = 1e-10


@dataclass(frozen=True)
class OrderedEncoding:
    """Target statistics replacing categorical columns in ordered boosting.

    Each categorical column expands into K columns, one per class.
    """

    columns: tuple[int, ...]
    codes: tuple[np.ndarray, ...]  # sorted category codes per column
    counts: tuple[np.ndarray, ...]  # (n_codes, K) class counts per code
    prior: np.ndarray
    a: float

    def expanded_sources(self, d: int) -> list[int]:
        """Original feature index for every column of the expanded matrix."""
        K = len(self.prior)
        src = [j for j in range(d) if j not in self.columns]
        for j in self.columns:
            src.extend([j] * K)
        return src

    def transform(self, X: np.ndarray) -> np.ndarray:
        keep = [j for j in range(X.shape[1]) if j not in self.columns]
        parts = [X[:, keep]]
        for j, codes, counts in zip(self.columns, self.codes, self.counts):
            pos = np.searchsorted(codes, X[:, j])
            pos = np.minimum(pos, len(codes) - 1)
            hit = codes[pos] == X[:, j]
            tot = counts.sum(axis=1)
            enc = (counts + self.a * self.prior) / (tot + self.a)[:, None]
            out = np.tile(self.prior, (X.shape[0], 1))
            out[hit] = enc[pos[hit]]
            parts.append(out)
        return np.ascontiguousarray(np.hstack(parts))


@dataclass
class EnsembleModel:
    kind: str
    trees: list[Tree]
    label_map: LabelMap
    feature_names: tuple[str, ...]
    learning_rate: float = 1.0
    base_score: Optional[np.ndarray] = None
    alphas: Optional[np.ndarray] = None
    encoding: Optional[OrderedEncoding] = None
    train_meta: dict = field(default_factory=dict)

    @property
    def K(self) -> int:
        return self.label_map.K

    @property
    def d(self) -> int:
        return len(self.feature_names)

    @property
    def output_space(self) -> str:
        return "logit" if self.kind.startswith("grad_boost") else "probability"

    def model_input(self, X) -> np.ndarray:
        X = np.ascontiguousarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self.d:
            raise SchemaMismatch(f"expected {self.d} features, got {X.shape[-1]}")
        return self.encoding.transform(X) if self.encoding is not None else X

    def raw_output(self, X) -> np.ndarray:
        """Per-class output in the model's own space (probabilities or logits)."""
        Z = self.model_input(X)
        K, n = self.K, Z.shape[0]
        if self.kind in ("random_forest", "extra_trees"):
            acc = np.zeros((n, K))
            for t in self.trees:
                acc += t.predict(Z)
            return acc / len(self.trees)
        if self.kind == "adaboost":
            acc = np.zeros((n, K))
            for t, a in zip(self.trees, self.alphas):
                acc[np.arange(n), np.argmax(t.predict(Z), axis=1)] += a
            return acc / float(np.sum(self.alphas))
        F = np.tile(self.base_score, (n, 1))
        for i, t in enumerate(self.trees):
            F[:, i % K] += self.learning_rate * t.predict(Z)[:, 0]
        return F

    def predict_proba(self, X) -> np.ndarray:
        out = self.raw_output(X)
        if self.output_space == "logit":
            return softmax(out)
        return out / out.sum(axis=1, keepdims=True)

    def predict(self, X) -> np.ndarray:
        return np.argmax(self.predict_proba(X), axis=1)


def _table_X(m: EnsembleModel, t) -> np.ndarray:
    if isinstance(t, FeatureTable):
        if tuple(t.feature_names) != tuple(m.feature_names):
            raise SchemaMismatch("feature names differ from the model's training features")
        return t.X
    return np.asarray(t, dtype=np.float64)


def predict_proba(m: EnsembleModel, t) -> np.ndarray:
    return m.predict_proba(_table_X(m, t))


def predict(m: EnsembleModel, t) -> np.ndarray:
    return m.predict(_table_X(m, t))


def softmax(F: np.ndarray) -> np.ndarray:
    Z = F - F.max(axis=1, keepdims=True)
    E = np.exp(Z)
    return E / E.sum(axis=1, keepdims=True)


def _row_weights(train: FeatureTable, weights) -> np.ndarray:
    if weights is None:
        return np.ones(train.n)
    return np.asarray(weights, dtype=np.float64)[train.y]


def _tree_seeds(seed: int, n: int) -> list:
    return np.random.SeedSequence(seed).spawn(n)


# -- forests -------------------------------------------------------------------

def _fit_forest(kind, train: FeatureTable, weights, T, params: TreeParams, seed,
                bootstrap: bool, n_jobs: int) -> EnsembleModel:
    if T < 1:
        raise ValueError("need at least one tree")
    rw = _row_weights(train, weights)
    X, y, K, N = train.X, train.y, train.K, train.n
    seeds = _tree_seeds(seed, T)

    def one(i):
        rng = np.random.default_rng(seeds[i])
        w = rw
        if bootstrap:
            w = rw * np.bincount(rng.integers(0, N, N), minlength=N)
        return grow_tree(X, y, w, K, params, rng)

    if n_jobs > 1:
        with ThreadPoolExecutor(n_jobs) as ex:
            trees = list(ex.map(one, range(T)))
    else:
        trees = [one(i) for i in range(T)]
    meta = {"seed": seed, "n_estimators": T, "params": params.to_json(),
            "bootstrap": bootstrap, "class_weights": weights is not None}
    return EnsembleModel(kind, trees, train.label_map, train.feature_names, train_meta=meta)


def fit_random_forest(train: FeatureTable, weights=None, T: int = 100,
                      params: TreeParams | None = None, seed: int = 0,
                      n_jobs: int = 1) -> EnsembleModel:
    """Bootstrap-aggregated best-split trees; prediction averages leaf distributions."""
    params = params or TreeParams(feature_subset="sqrt", split_mode="best")
    return _fit_forest("random_forest", train, weights, T, params, seed, True, n_jobs)


def fit_extra_trees(train: FeatureTable, weights=None, T: int = 100,
                    params: TreeParams | None = None, seed: int = 0, n_jobs: int = 1,
                    bootstrap: bool = False) -> EnsembleModel:
    params = params or TreeParams(feature_subset="sqrt", split_mode="random")
    return _fit_forest("extra_trees", train, weights, T, params, seed, bootstrap, n_jobs)


# -- AdaBoost ------------------------------------------------------------------

def adaboost_alpha(epsilon: float, K: int = 2, variant: str = "paper") -> float:
    if not 0.0 < epsilon < 1.0:
        raise InvalidError(f"weak-learner error {epsilon} outside (0, 1)")
    if variant == "paper":
        return 0.5 * math.log((1.0 - epsilon) / epsilon)
    if variant == "samme":
        return math.log((1.0 - epsilon) / epsilon) + math.log(K - 1)
    raise ValueError(f"unknown AdaBoost variant {variant!r}")


def fit_adaboost(train: FeatureTable, weights=None, T: int = 100,
                 base_params: TreeParams | None = None, variant: str | None = None,
                 seed: int = 0) -> EnsembleModel:
    """Discrete AdaBoost.

    Rounds stop once the weighted error reaches 0.5 (the ``"paper"`` variant) or
    ``1 - 1/K`` (``samme``).  If the very first learner already fails, it is
    kept with unit weight so the model still predicts; ``train_meta``
    records this as ``"degenerate"``.
    """
    if T < 1:
        raise ValueError("need at least one round")
    K = train.K
    variant = variant or ("samme" if K > 2 else "paper")
    base_params = base_params or TreeParams(max_depth=1, feature_subset="all")
    limit = 0.5 if variant == "paper" else 1.0 - 1.0 / K
    rng = np.random.default_rng(seed)
    X, y = train.X, train.y
    w = _row_weights(train, weights)
    w = w / w.sum()
    trees, alphas = [], []
    stop = "max_rounds"
    weight_sums = []
    for _ in range(T):
        tree = grow_tree(X, y, w, K, base_params, rng)
        miss = np.argmax(tree.predict(X), axis=1) != y
        eps = float(w[miss].sum())
        if eps >= limit:
            if not trees:
                trees.append(tree)
                alphas.append(1.0)
                stop = "degenerate"
            else:
                stop = "error_limit"
            break
        if eps <= 0.0:
            trees.append(tree)
            alphas.append(adaboost_alpha(ADABOOST_EPS_FLOOR, K, variant))
            stop = "perfect_learner"
            break
        alpha = adaboost_alpha(eps, K, variant)
        trees.append(tree)
        alphas.append(alpha)
        w = w * np.exp(alpha * miss)
        w = w / w.sum()
        weight_sums.append(float(w.sum()))
    meta = {"seed": seed, "n_estimators": T, "params": base_params.to_json(),
            "variant": variant, "rounds": len(trees), "stop": stop,
            "class_weights": weights is not None}
    return EnsembleModel("adaboost", trees, train.label_map, train.feature_names,
                         alphas=np.asarray(alphas), train_meta=meta)


# -- gradient boosting -----------------------------------------------------------

def softmax_loss_grad(logits, y, row_weights=None):
    """Weighted multi-class log loss with per-row gradients and diagonal hessians.

    The loss is normalised by the total weight; ``g`` and ``h`` are not.
    """
    F = np.asarray(logits, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    n, K = F.shape
    w = np.ones(n) if row_weights is None else np.asarray(row_weights, dtype=np.float64)
    Z = F - F.max(axis=1, keepdims=True)
    logp = Z - np.log(np.exp(Z).sum(axis=1, keepdims=True))
    p = np.exp(logp)
    loss = float(-(w * logp[np.arange(n), y]).sum() / w.sum())
    onehot = np.zeros_like(p)
    onehot[np.arange(n), y] = 1.0
    g = w[:, None] * (p - onehot)
    h = w[:, None] * p * (1.0 - p)
    return loss, g, h


def ordered_target_stats(column, y, permutation, prior, a: float = 1.0) -> np.ndarray:
    """Leakage-free target statistics for one categorical column.

    Row at permutation position ``i`` with category ``v`` gets, per class c,
    ``(#earlier rows with v and label c + a * prior_c) / (#earlier rows with v + a)``.
    Returns an N x K array in the original row order.
    """
    column = np.asarray(column)
    y = np.asarray(y, dtype=np.int64)
    perm = np.asarray(permutation, dtype=np.int64)
    prior = np.atleast_1d(np.asarray(prior, dtype=np.float64))
    if len(prior) == 1:  # scalar prior: binary problem, prior is for class 1
        prior = np.array([1.0 - prior[0], prior[0]])
    K = len(prior)
    n = len(column)
    cp, yp = column[perm], y[perm]
    s = np.argsort(cp, kind="stable")
    cs = cp[s]
    Y = np.zeros((n, K))
    Y[np.arange(n), yp[s]] = 1.0
    before = np.cumsum(Y, axis=0) - Y
    new_group = np.r_[True, cs[1:] != cs[:-1]]
    starts = np.flatnonzero(new_group)
    gid = np.cumsum(new_group) - 1
    prev = before - before[starts[gid]]
    cnt = np.arange(n) - starts[gid]
    enc_sorted = (prev + a * prior) / (cnt + a)[:, None]
    out = np.empty((n, K))
    out[perm[s]] = enc_sorted
    return out


def _fit_ordered_encoding(train: FeatureTable, rng, a: float):
    cols = tuple(j for j, c in enumerate(train.categorical) if c)
    K, y = train.K, train.y
    prior = np.bincount(y, minlength=K) / train.n
    if not cols:
        return None, train.X, None
    perm = rng.permutation(train.n)
    codes, counts, stats = [], [], []
    for j in cols:
        col = train.X[:, j]
        u, inv = np.unique(col, return_inverse=True)
        c = np.zeros((len(u), K))
        np.add.at(c, (inv, y), 1.0)
        codes.append(u)
        counts.append(c)
        stats.append(ordered_target_stats(col, y, perm, prior, a))
    enc = OrderedEncoding(cols, tuple(codes), tuple(counts), prior, a)
    keep = [j for j in range(train.d) if j not in cols]
    Xe = np.ascontiguousarray(np.hstack([train.X[:, keep]] + stats))
    return enc, Xe, perm


def fit_gradient_boost(train: FeatureTable, weights=None, T: int = 100,
                       eta: float | None = None, lam: float = 1.0, gamma: float = 0.0,
                       mode: str = "regularized", tree_params: TreeParams | None = None,
                       seed: int = 0, a: float = 1.0) -> EnsembleModel:
    """Multi-class gradient boosting with one second-order tree per class per round."""
    if T < 1:
        raise ValueError("need at least one round")
    if mode not in ("regularized", "ordered"):
        raise ValueError(f"unknown boosting mode {mode!r}")
    eta = (0.3 if mode == "regularized" else 0.1) if eta is None else eta
    if eta < 0:
        raise ValueError("learning rate must be nonnegative")
    tree_params = tree_params or TreeParams(max_depth=6, feature_subset="all")
    rng = np.random.default_rng(seed)
    K, y = train.K, train.y
    rw = _row_weights(train, weights)
    enc, Xe, _ = (None, train.X, None)
    if mode == "ordered":
        enc, Xe, _ = _fit_ordered_encoding(train, rng, a)
    priors = np.bincount(y, weights=rw, minlength=K) / rw.sum()
    base = np.log(np.maximum(priors, 1e-300))
    F = np.tile(base, (train.n, 1))
    trees, losses = [], []
    for _ in range(T):
        loss, g, h = softmax_loss_grad(F, y, rw)
        losses.append(loss)
        for k in range(K):
            t = grow_gradient_tree(Xe, g[:, k], h[:, k], params=tree_params, lam=lam,
                                   gamma=gamma, cover_weights=rw, rng=rng)
            trees.append(t)
            F[:, k] += eta * t.predict(Xe)[:, 0]
    losses.append(softmax_loss_grad(F, y, rw)[0])
    kind = "grad_boost_regularized" if mode == "regularized" else "grad_boost_ordered"
    meta = {"seed": seed, "n_estimators": T, "params": tree_params.to_json(), "lambda": lam,
            "gamma": gamma, "mode": mode, "train_loss": losses,
            "class_weights": weights is not None}
    if mode == "ordered":
        meta["ordered_permutations"] = 1
        meta["prior_strength"] = a
    return EnsembleModel(kind, trees, train.label_map, train.feature_names, learning_rate=eta,
                         base_score=base, encoding=enc, train_meta=meta)


# -- importance --------------------------------------------------------------------

def gini_importance(m: EnsembleModel) -> list[tuple[str, float]]:
    """Mean over trees of per-feature cover-weighted impurity decrease, normalised to 1.

    Boosted trees contribute their second-order split gains instead.
    Expanded ordered-encoding columns are folded back onto their source feature.
    """
    if not m.trees:
        raise ValueError("model has no trees")
    d_in = m.trees[0].n_features
    total = np.zeros(d_in)
    for t in m.trees:
        total += t.feature_gains()
    total /= len(m.trees)
    imp = np.zeros(m.d)
    src = m.encoding.expanded_sources(m.d) if m.encoding is not None else range(m.d)
    for j_in, j in enumerate(src):
        imp[j] += total[j_in]
    s = imp.sum()
    if s > 0:
        imp = imp / s
    order = sorted(range(m.d), key=lambda j: (-imp[j], j))
    return [(m.feature_names[j], float(imp[j])) for j in order]


# -- unified model specs -------------------------------------------------------------

@dataclass(frozen=True)
class ModelSpec:
    kind: str
    params: dict = field(default_factory=dict)
    name: str | None = None

    def __post_init__(self):
        kind = SHORT_NAMES.get(self.kind, self.kind)
        if kind not in KINDS:
            raise ValueError(f"unknown model kind {self.kind!r}")
        object.__setattr__(self, "kind", kind)
        if self.name is None:
            object.__setattr__(self, "name", DISPLAY_NAMES[kind])


_TREE_KEYS = ("max_depth", "min_samples_split", "feature_subset", "split_mode",
              "min_impurity_decrease")


def fit_model(spec: ModelSpec, train: FeatureTable, seed: int = 0,
              class_weighting: bool = True) -> EnsembleModel:
    from .preprocess import class_weights
    p = dict(spec.params)
    weights = class_weights(train.y, train.K) if p.pop("class_weights", class_weighting) else None
    T = int(p.pop("n_estimators", 100))
    tree_kw = {k: p.pop(k) for k in _TREE_KEYS if k in p}
    if spec.kind in ("random_forest", "extra_trees"):
        split = "best" if spec.kind == "random_forest" else "random"
        params = TreeParams(**{"feature_subset": "sqrt", "split_mode": split, **tree_kw})
        n_jobs = int(p.pop("n_jobs", 1))
        if spec.kind == "random_forest":
            m = fit_random_forest(train, weights, T, params, seed, n_jobs)
        else:
            m = fit_extra_trees(train, weights, T, params, seed, n_jobs,
                                bootstrap=bool(p.pop("bootstrap", False)))
    elif spec.kind == "adaboost":
        params = TreeParams(**{"max_depth": 1, "feature_subset": "all", **tree_kw})
        m = fit_adaboost(train, weights, T, params, p.pop("variant", None), seed)
    else:
        params = TreeParams(**{"max_depth": 6, "feature_subset": "all", **tree_kw})
        mode = "regularized" if spec.kind == "grad_boost_regularized" else "ordered"
        m = fit_gradient_boost(train, weights, T, p.pop("learning_rate", None),
                               p.pop("reg_lambda", 1.0), p.pop("gamma", 0.0), mode, params,
                               seed, p.pop("prior_strength", 1.0))
    if p:
        raise ValueError(f"unknown parameters for {spec.kind}: {sorted(p)}")
    return m


# -- persistence -------------------------------------------------------------------

def _tree_json(t: Tree) -> dict:
    nodes = []
    for i in range(t.n_nodes):
        leaf = t.feature[i] < 0
        nodes.append({"node_id": i, "kind": "leaf" if leaf else "internal",
                      "feature": int(t.feature[i]), "threshold": None if leaf else float(t.threshold[i]),
                      "left": int(t.left[i]), "right": int(t.right[i]),
                      "value": [float(v) for v in t.value[i]], "cover": float(t.cover[i]),
                      "gain": float(t.gain[i])})
    return {"n_features": t.n_features, "nodes": nodes}


def _tree_from_json(obj) -> Tree:
    nodes = obj["nodes"]
    if [n["node_id"] for n in nodes] != list(range(len(nodes))):
        raise DecodeError("node ids must be 0..n-1 in order")
    thr = [np.nan if n["threshold"] is None else n["threshold"] for n in nodes]
    return Tree(np.array([n["feature"] for n in nodes], dtype=np.int64),
                np.array(thr, dtype=np.float64),
                np.array([n["left"] for n in nodes], dtype=np.int64),
                np.array([n["right"] for n in nodes], dtype=np.int64),
                np.array([n["value"] for n in nodes], dtype=np.float64).reshape(len(nodes), -1),
                np.array([np.nan if n.get("cover") is None else n["cover"] for n in nodes],
                         dtype=np.float64),
                np.array([n["gain"] for n in nodes], dtype=np.float64),
                int(obj["n_features"]))


def model_to_json(m: EnsembleModel) -> dict:
    enc = None
    if m.encoding is not None:
        e = m.encoding
        enc = {"columns": list(e.columns), "codes": [c.tolist() for c in e.codes],
               "counts": [c.tolist() for c in e.counts], "prior": e.prior.tolist(), "a": e.a}
    return {
        "format_version": FORMAT_VERSION, "kind": m.kind, "K": m.K, "d": m.d,
        "feature_names": list(m.feature_names), "class_names": list(m.label_map.names),
        "train_meta": m.train_meta, "learning_rate": m.learning_rate,
        "base_score": None if m.base_score is None else m.base_score.tolist(),
        "alphas": None if m.alphas is None else m.alphas.tolist(),
        "encoding": enc, "trees": [_tree_json(t) for t in m.trees],
    }


def model_from_json(obj) -> EnsembleModel:
    if not isinstance(obj, dict) or "format_version" not in obj:
        raise DecodeError("not a model file")
    if obj["format_version"] != FORMAT_VERSION:
        raise UnsupportedModelVersion(f"model format {obj['format_version']} "
                                      f"(this build reads {FORMAT_VERSION})")
    try:
        enc = None
        if obj["encoding"] is not None:
            e = obj["encoding"]
            enc = OrderedEncoding(tuple(e["columns"]),
                                  tuple(np.array(c, dtype=np.float64) for c in e["codes"]),
                                  tuple(np.array(c, dtype=np.float64).reshape(-1, obj["K"])
                                        for c in e["counts"]),
                                  np.array(e["prior"], dtype=np.float64), float(e["a"]))
        m = EnsembleModel(
            obj["kind"], [_tree_from_json(t) for t in obj["trees"]],
            LabelMap(tuple(obj["class_names"])), tuple(obj["feature_names"]),
            learning_rate=float(obj["learning_rate"]),
            base_score=None if obj["base_score"] is None else np.array(obj["base_score"], dtype=np.float64),
            alphas=None if obj["alphas"] is None else np.array(obj["alphas"], dtype=np.float64),
            encoding=enc, train_meta=obj["train_meta"])
    except (KeyError, TypeError, ValueError) as exc:
        raise DecodeError(f"malformed model file: {exc}") from exc
    if m.kind not in KINDS or m.K != obj["K"] or m.d != obj["d"]:
        raise DecodeError("model header inconsistent")
    return m


def save_model(m: EnsembleModel, path):
    return jsonio.write_json(model_to_json(m), path)


def load_model(path) -> EnsembleModel:
    return model_from_json(jsonio.read_json(path))
