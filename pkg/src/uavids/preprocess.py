"""Imputation, z-score scaling, label encoding, stratified splits and class weights."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import jsonio
from .errors import (AllMissingColumn, MissingClass, SchemaConflict, SchemaMismatch,
                     StratificationImpossible, UnseenCategory)
from .ingest import (LABEL_COLUMN, ColumnSpec, LabelMap, RawTable, is_missing,
                     parse_number, _read_csv, _sidecar)


@dataclass(frozen=True)
class NumericStats:
    median: float
    mean: float
    std: float


@dataclass(frozen=True)
class CategoricalStats:
    mode: str
    encoding: dict[str, int]


@dataclass(frozen=True)
class PreprocessRecipe:
    columns: tuple[str, ...]
    numeric: dict[str, NumericStats]
    categorical: dict[str, CategoricalStats]
    label_map: LabelMap
    label_column: str = LABEL_COLUMN

    def to_json(self) -> dict:
        cols = {}
        for name in self.columns:
            if name in self.numeric:
                s = self.numeric[name]
                cols[name] = {"kind": "numeric", "median": s.median, "mean": s.mean, "std": s.std}
            else:
                s = self.categorical[name]
                cols[name] = {"kind": "categorical", "mode": s.mode,
                              "encoding": dict(s.encoding)}
        return {"columns": cols, "order": list(self.columns),
                "label_column": self.label_column, "label_map": self.label_map.to_json()}

    @classmethod
    def from_json(cls, obj) -> "PreprocessRecipe":
        num, cat = {}, {}
        for name in obj["order"]:
            c = obj["columns"][name]
            if c["kind"] == "numeric":
                num[name] = NumericStats(float(c["median"]), float(c["mean"]), float(c["std"]))
            else:
                cat[name] = CategoricalStats(c["mode"], {k: int(v) for k, v in c["encoding"].items()})
        return cls(tuple(obj["order"]), num, cat,
                   LabelMap.from_mapping(obj["label_map"]), obj.get("label_column", LABEL_COLUMN))


@dataclass(frozen=True)
class FeatureTable:
    feature_names: tuple[str, ...]
    X: np.ndarray
    y: np.ndarray | None
    label_map: LabelMap
    categorical: tuple[bool, ...] = field(default=())

    def __post_init__(self):
        X = np.ascontiguousarray(self.X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != len(self.feature_names):
            raise SchemaMismatch("X must be N x d with one column per feature name")
        object.__setattr__(self, "X", X)
        if self.y is not None:
            y = np.asarray(self.y, dtype=np.int64)
            if len(y) != len(X):
                raise SchemaMismatch("y length differs from X rows")
            object.__setattr__(self, "y", y)
        if not self.categorical:
            object.__setattr__(self, "categorical", (False,) * len(self.feature_names))

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]

    @property
    def K(self) -> int:
        return self.label_map.K

    def take(self, rows) -> "FeatureTable":
        rows = np.asarray(rows, dtype=np.int64)
        return FeatureTable(self.feature_names, self.X[rows],
                            None if self.y is None else self.y[rows],
                            self.label_map, self.categorical)

    def select(self, names: Sequence[str]) -> "FeatureTable":
        idx = [self.feature_names.index(n) for n in names]
        return FeatureTable(tuple(names), self.X[:, idx], self.y, self.label_map,
                            tuple(self.categorical[i] for i in idx))


def _present(col) -> list:
    return [c for c in col if not is_missing(c)]


def fit_recipe(t: RawTable, schema: Sequence[ColumnSpec], label_column: str = LABEL_COLUMN,
               label_map: LabelMap | None = None) -> PreprocessRecipe:
    """Learn medians, means, population standard deviations, modes and encodings."""
    if label_column not in t.columns:
        raise SchemaMismatch(f"label column {label_column!r} not in table")
    kinds = {s.name: s.kind for s in schema if s.name != label_column}
    missing = [n for n in t.names if n != label_column and n not in kinds]
    if missing:
        raise SchemaMismatch(f"schema does not cover columns {missing}")
    numeric, categorical = {}, {}
    for name, kind in kinds.items():
        col = t[name]
        vals = _present(col)
        if not vals:
            raise AllMissingColumn(name)
        if kind == "numeric":
            parsed = [parse_number(v) for v in vals]
            if any(v is None for v in parsed):
                raise SchemaConflict(f"column {name!r} declared numeric holds non-numeric cells")
            nums = np.array(parsed, dtype=np.float64)
            med = float(np.median(nums))
            full = np.full(t.row_count, med)
            mask = np.array([not is_missing(c) for c in col])
            full[mask] = nums
            numeric[name] = NumericStats(med, float(full.mean()), float(full.std()))
        else:
            strs = [str(v) for v in vals]
            uniq, counts = np.unique(np.array(strs, dtype=object), return_counts=True)
            # np.unique sorts, so argmax picks the lexicographically smallest tie
            mode = str(uniq[int(np.argmax(counts))])
            categorical[name] = CategoricalStats(mode, {str(u): i for i, u in enumerate(uniq)})
    if label_map is None:
        label_map = LabelMap.from_names(str(v) for v in t[label_column])
    return PreprocessRecipe(tuple(kinds), numeric, categorical, label_map, label_column)


def apply_recipe(r: PreprocessRecipe, t: RawTable) -> FeatureTable:
    """Impute, standardise and encode ``t``; the result never contains NaN."""
    extra = [n for n in t.names if n != r.label_column and n not in r.numeric
             and n not in r.categorical]
    if extra:
        raise SchemaMismatch(f"columns {extra} are not in the recipe")
    X = np.empty((t.row_count, len(r.columns)), dtype=np.float64)
    flags = []
    for j, name in enumerate(r.columns):
        col = t.columns.get(name)
        if col is None:
            col = np.full(t.row_count, None, dtype=object)
        if name in r.numeric:
            s = r.numeric[name]
            parsed = [s.median if is_missing(c) else parse_number(c) for c in col]
            if any(v is None for v in parsed):
                raise SchemaConflict(f"column {name!r} holds non-numeric cells")
            v = np.array(parsed, dtype=np.float64)
            X[:, j] = 0.0 if s.std == 0.0 else (v - s.mean) / s.std
            flags.append(False)
        else:
            s = r.categorical[name]
            unseen_code = len(s.encoding)
            codes = [s.encoding.get(s.mode if is_missing(c) else str(c), unseen_code) for c in col]
            X[:, j] = codes
            n_unseen = sum(1 for c in codes if c == unseen_code)
            if n_unseen:
                warnings.warn(f"{n_unseen} unseen categories in column {name!r}", UnseenCategory,
                              stacklevel=2)
            flags.append(True)
    y = None
    if r.label_column in t.columns:
        y = r.label_map.encode(str(v) for v in t[r.label_column])
    assert not np.isnan(X).any()
    return FeatureTable(r.columns, X, y, r.label_map, tuple(flags))


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def stratified_indices(y, train_fraction: float, seed: int,
                       label_map: LabelMap | None = None) -> tuple[np.ndarray, np.ndarray]:
    if not 0.0 < train_fraction < 1.0:
        raise ValueError("train_fraction must lie strictly between 0 and 1")
    y = np.asarray(y)
    rng = np.random.default_rng(seed)
    train, test = [], []
    for k in np.unique(y):
        idx = np.flatnonzero(y == k)
        if len(idx) < 2:
            name = label_map.names[k] if label_map is not None else k
            raise StratificationImpossible(f"class {name!r} has a single sample")
        n_tr = min(max(_round_half_up(train_fraction * len(idx)), 1), len(idx) - 1)
        perm = rng.permutation(idx)
        train.append(perm[:n_tr])
        test.append(perm[n_tr:])
    return np.sort(np.concatenate(train)), np.sort(np.concatenate(test))


def stratified_split(t: FeatureTable, train_fraction: float = 0.8,
                     seed: int = 0) -> tuple[FeatureTable, FeatureTable]:
    tr, te = stratified_indices(t.y, train_fraction, seed, t.label_map)
    return t.take(tr), t.take(te)


def stratified_folds(y, k_folds: int, seed: int, label_map: LabelMap | None = None) -> np.ndarray:
    """Fold id per row; per-class fold sizes differ by at most one."""
    if k_folds < 2:
        raise ValueError("k_folds must be >= 2")
    y = np.asarray(y)
    rng = np.random.default_rng(seed)
    fold = np.empty(len(y), dtype=np.int64)
    offset = 0
    for k in np.unique(y):
        idx = np.flatnonzero(y == k)
        if len(idx) < k_folds:
            name = label_map.names[k] if label_map is not None else k
            raise StratificationImpossible(
                f"class {name!r} has {len(idx)} samples, fewer than {k_folds} folds")
        perm = rng.permutation(idx)
        # rotate the start so small classes do not all pile into fold 0
        fold[perm] = (np.arange(len(perm)) + offset) % k_folds
        offset = (offset + len(perm)) % k_folds
    return fold


def class_weights(y, K: int) -> np.ndarray:
    """Balanced weights ``N / (K * n_k)``."""
    y = np.asarray(y, dtype=np.int64)
    counts = np.bincount(y, minlength=K)[:K]
    if np.any(counts == 0):
        raise MissingClass(f"classes {np.flatnonzero(counts == 0).tolist()} absent from labels")
    return len(y) / (K * counts.astype(np.float64))


# -- persistence ---------------------------------------------------------------

def write_features(t: FeatureTable, path) -> Path:
    path = Path(path)
    header = list(t.feature_names) + [LABEL_COLUMN]
    y = t.y if t.y is not None else np.full(t.n, -1)
    rows = ([float(v) for v in t.X[i]] + [int(y[i])] for i in range(t.n))
    jsonio.atomic_write_text(path, jsonio.csv_text(header, rows))
    jsonio.write_json({"kind": "features", "feature_names": list(t.feature_names),
                       "categorical": list(t.categorical),
                       "label_map": t.label_map.to_json()}, _sidecar(path))
    return path


def read_features(path) -> FeatureTable:
    path = Path(path)
    meta = jsonio.read_json(_sidecar(path))
    if meta.get("kind") != "features":
        raise SchemaConflict(f"{path}: sidecar does not describe a feature table")
    header, body = _read_csv(path)
    names = tuple(meta["feature_names"])
    if tuple(header[:-1]) != names or header[-1] != LABEL_COLUMN:
        raise SchemaConflict(f"{path}: header does not match sidecar")
    arr = np.array(body, dtype=np.float64).reshape(len(body), len(header))
    y = arr[:, -1].astype(np.int64)
    return FeatureTable(names, arr[:, :-1], None if (len(y) and (y < 0).all()) else y,
                        LabelMap.from_mapping(meta["label_map"]), tuple(meta["categorical"]))
