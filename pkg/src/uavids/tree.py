"""Decision-tree core shared by every ensemble.

Trees live in flat node arrays (an arena) with the root at index 0.  Leaves
have ``feature == -1``.  Classification trees store a class-probability
vector per node; gradient trees store a single scalar weight.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from . import _backend
from .errors import EmptyNode

HESS_FLOOR = 1e-16


@dataclass(frozen=True)
class SplitSpec:
    feature: int
    threshold: float  # go left iff x <= threshold


@dataclass(frozen=True)
class TreeParams:
    max_depth: Optional[int] = None
    min_samples_split: int = 2
    feature_subset: Union[str, int] = "sqrt"  # "all" | "sqrt" | count
    split_mode: str = "best"  # "best" | "random"
    min_impurity_decrease: float = 0.0

    def __post_init__(self):
        if self.min_samples_split < 2:
            raise ValueError("min_samples_split must be >= 2")
        if self.split_mode not in ("best", "random"):
            raise ValueError(f"unknown split_mode {self.split_mode!r}")
        if self.min_impurity_decrease < 0:
            raise ValueError("min_impurity_decrease must be >= 0")
        if self.max_depth is not None and self.max_depth < 0:
            raise ValueError("max_depth must be >= 0 or None")
        fs = self.feature_subset
        if not (fs in ("all", "sqrt") or (isinstance(fs, int) and fs >= 1)):
            raise ValueError(f"bad feature_subset {fs!r}")

    def n_features(self, d: int) -> int:
        fs = self.feature_subset
        if fs == "all":
            return d
        if fs == "sqrt":
            return max(1, int(math.sqrt(d)))
        return min(int(fs), d)

    def to_json(self) -> dict:
        return {"max_depth": self.max_depth, "min_samples_split": self.min_samples_split,
                "feature_subset": self.feature_subset, "split_mode": self.split_mode,
                "min_impurity_decrease": self.min_impurity_decrease}

    @classmethod
    def from_json(cls, d: dict) -> "TreeParams":
        return cls(**d)


@dataclass(frozen=True)
class Tree:
    """Node arena.  ``gain`` holds the cover-weighted impurity decrease (or
    the second-order split gain for gradient trees) at internal nodes."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray  # (n_nodes, V)
    cover: np.ndarray
    gain: np.ndarray
    n_features: int

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    @property
    def is_leaf(self) -> np.ndarray:
        return self.feature < 0

    def depth(self) -> int:
        depth = np.zeros(self.n_nodes, dtype=np.int64)
        for i in range(self.n_nodes):  # children always follow their parent
            if self.feature[i] >= 0:
                depth[self.left[i]] = depth[self.right[i]] = depth[i] + 1
        return int(depth.max())

    def apply(self, X) -> np.ndarray:
        X = np.ascontiguousarray(X, dtype=np.float64)
        return _backend.kernels().apply_tree(X, self.feature, self.threshold, self.left, self.right)

    def predict(self, X) -> np.ndarray:
        return self.value[self.apply(X)]

    def feature_gains(self) -> np.ndarray:
        internal = self.feature >= 0
        return np.bincount(self.feature[internal], weights=self.gain[internal],
                           minlength=self.n_features)


class _Builder:
    def __init__(self, V: int, d: int):
        self.V, self.d = V, d
        self.feature, self.threshold, self.left, self.right = [], [], [], []
        self.value, self.cover, self.gain = [], [], []

    def add(self, value, cover) -> int:
        self.feature.append(-1)
        self.threshold.append(np.nan)
        self.left.append(-1)
        self.right.append(-1)
        self.value.append(value)
        self.cover.append(cover)
        self.gain.append(0.0)
        return len(self.feature) - 1

    def build(self) -> Tree:
        return Tree(np.asarray(self.feature, dtype=np.int64),
                    np.asarray(self.threshold, dtype=np.float64),
                    np.asarray(self.left, dtype=np.int64),
                    np.asarray(self.right, dtype=np.int64),
                    np.asarray(self.value, dtype=np.float64).reshape(-1, self.V),
                    np.asarray(self.cover, dtype=np.float64),
                    np.asarray(self.gain, dtype=np.float64), self.d)


def gini_impurity(weighted_counts) -> float:
    c = np.asarray(weighted_counts, dtype=np.float64)
    total = c.sum()
    if total <= 0:
        raise EmptyNode("gini impurity of a node with no weight")
    p = c / total
    return float(1.0 - np.dot(p, p))


def _sample_features(d: int, params: TreeParams, rng) -> np.ndarray:
    m = params.n_features(d)
    if m >= d:
        return np.arange(d, dtype=np.int64)
    return np.sort(rng.choice(d, size=m, replace=False)).astype(np.int64)


def _node_split(X, idx, y, w, K, params: TreeParams, rng):
    feats = _sample_features(X.shape[1], params, rng)
    kern = _backend.kernels()
    if params.split_mode == "best":
        return kern.best_split_class(X, idx, y, w, K, feats)
    sub = X[np.ix_(idx, feats)]
    lo, hi = sub.min(axis=0), sub.max(axis=0)
    thr = np.full(len(feats), np.nan)
    for j in range(len(feats)):
        if lo[j] < hi[j]:
            t = rng.uniform(lo[j], hi[j])
            if t < hi[j]:
                thr[j] = t
    return kern.random_split_class(X, idx, y, w, K, feats, thr)


def find_best_split(X_node, y_node, sample_weights, params: TreeParams, rng=None,
                    K: int | None = None):
    """Best (or random-threshold) Gini split of one node, or ``None``.

    Returns ``(SplitSpec, impurity_decrease)`` where the decrease is
    ``G(parent) - (w_L G_L + w_R G_R) / w_parent``.
    """
    X = np.ascontiguousarray(X_node, dtype=np.float64)
    y = np.asarray(y_node, dtype=np.int64)
    w = np.ascontiguousarray(sample_weights, dtype=np.float64)
    K = int(y.max()) + 1 if K is None else K
    rng = np.random.default_rng(rng)
    idx = np.flatnonzero(w > 0).astype(np.int64)
    if len(idx) < params.min_samples_split:
        return None
    f, t, delta = _node_split(X, idx, y, w, K, params, rng)
    if f < 0 or not delta > params.min_impurity_decrease:
        return None
    return SplitSpec(int(f), float(t)), float(delta)


def grow_tree(X, y, sample_weights, K: int, params: TreeParams = TreeParams(), rng=None) -> Tree:
    """Grow a weighted-Gini classification tree.  Rows with zero weight are ignored."""
    X = np.ascontiguousarray(X, dtype=np.float64)
    y = np.ascontiguousarray(y, dtype=np.int64)
    w = np.ascontiguousarray(sample_weights, dtype=np.float64)
    if X.shape[0] < 1 or np.any(w < 0) or not w.sum() > 0:
        raise ValueError("need at least one row and nonnegative weights with positive sum")
    rng = np.random.default_rng(rng)
    b = _Builder(K, X.shape[1])

    def leaf_stats(idx):
        counts = np.bincount(y[idx], weights=w[idx], minlength=K)
        total = counts.sum()
        return counts / total, total, counts

    # explicit stack, left child first: preorder ids without recursion limits
    stack = [(np.flatnonzero(w > 0).astype(np.int64), 0, -1, False)]
    while stack:
        idx, depth, parent, is_right = stack.pop()
        value, cover, counts = leaf_stats(idx)
        node = b.add(value, cover)
        if parent >= 0:
            (b.right if is_right else b.left)[parent] = node
        if (params.max_depth is not None and depth >= params.max_depth) \
                or len(idx) < params.min_samples_split or np.count_nonzero(counts) <= 1:
            continue
        f, t, delta = _node_split(X, idx, y, w, K, params, rng)
        if f < 0 or not delta > params.min_impurity_decrease:
            continue
        go_left = X[idx, f] <= t
        b.feature[node], b.threshold[node] = int(f), float(t)
        b.gain[node] = cover * delta
        stack.append((idx[~go_left], depth + 1, node, True))
        stack.append((idx[go_left], depth + 1, node, False))
    return b.build()


def tree_predict(tree: Tree, x) -> np.ndarray:
    """Leaf value for a single feature vector (probabilities or a length-1 weight)."""
    x = np.asarray(x, dtype=np.float64).reshape(1, -1)
    return tree.predict(x)[0]


def leaf_weight(G: float, H: float, lam: float) -> float:
    return -G / max(H + lam, HESS_FLOOR)


def split_gain(GL, HL, GR, HR, lam, gamma) -> float:
    def s(G, H):
        return G * G / max(H + lam, HESS_FLOOR)
    return 0.5 * (s(GL, HL) + s(GR, HR) - s(GL + GR, HL + HR)) - gamma


def grow_gradient_tree(X, g, h, class_k: int | None = None, params: TreeParams | None = None,
                       lam: float = 1.0, gamma: float = 0.0, cover_weights=None,
                       rng=None) -> Tree:
    """Second-order regression tree with leaf weights ``-G / (H + lam)``.

    ``g`` and ``h`` may be N x K matrices (``class_k`` selects the column) or
    vectors.  A split is kept only if its gain, net of ``gamma``, is positive.
    ``cover_weights`` (row weights, default ones) feed the node covers used by
    TreeSHAP.
    """
    params = params or TreeParams(max_depth=6, feature_subset="all")
    X = np.ascontiguousarray(X, dtype=np.float64)
    g = np.asarray(g, dtype=np.float64)
    h = np.asarray(h, dtype=np.float64)
    if g.ndim == 2:
        g, h = g[:, class_k], h[:, class_k]
    g, h = np.ascontiguousarray(g), np.ascontiguousarray(h)
    if np.any(h < 0):
        raise ValueError("hessians must be nonnegative")
    cw = np.ones(len(g)) if cover_weights is None else np.asarray(cover_weights, dtype=np.float64)
    rng = np.random.default_rng(rng)
    kern = _backend.kernels()
    b = _Builder(1, X.shape[1])

    stack = [(np.arange(X.shape[0], dtype=np.int64), 0, -1, False)]
    while stack:
        idx, depth, parent, is_right = stack.pop()
        G = float(np.cumsum(g[idx])[-1])
        H = float(np.cumsum(h[idx])[-1])
        node = b.add([leaf_weight(G, H, lam)], float(np.cumsum(cw[idx])[-1]))
        if parent >= 0:
            (b.right if is_right else b.left)[parent] = node
        if (params.max_depth is not None and depth >= params.max_depth) \
                or len(idx) < params.min_samples_split:
            continue
        feats = _sample_features(X.shape[1], params, rng)
        f, t, gain = kern.best_split_grad(X, idx, g, h, feats, lam, gamma)
        if f < 0 or not gain > 0.0:
            continue
        go_left = X[idx, f] <= t
        b.feature[node], b.threshold[node], b.gain[node] = int(f), float(t), float(gain)
        stack.append((idx[~go_left], depth + 1, node, True))
        stack.append((idx[go_left], depth + 1, node, False))
    return b.build()
