"""Dataset ingestion.

A dataset root holds one subdirectory per traffic class, each with one or
more CSV files of already-extracted flow features.  Rows are labelled with
their folder name and merged into a single :class:`RawTable`.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from . import jsonio
from .errors import (AllMissingColumn, InvalidSpec, IoFailure, NoClassesFound,
                     SchemaConflict)

LABEL_COLUMN = "Label"
MISSING_TOKENS = frozenset({"", "nan"})

#: UAV traffic classes, benign first, in label-index order
UAV_CLASS_NAMES = (
    "Benign", "DoS Attacks", "Injection", "IP Spoofing", "MITM",
    "Password Cracking", "Payload Manipulation", "Replay Attack",
    "Unauthorized UDP Packets", "Video Interception Attack",
)


@dataclass(frozen=True)
class LabelMap:
    """Ordered class names; position in ``names`` is the class index."""

    names: tuple[str, ...]

    def __post_init__(self):
        if len(set(self.names)) != len(self.names):
            raise InvalidSpec("duplicate class names in label map")

    @classmethod
    def from_names(cls, names) -> "LabelMap":
        return cls(tuple(sorted(set(names))))

    @classmethod
    def from_mapping(cls, mapping: Mapping[str, int]) -> "LabelMap":
        idx = sorted(mapping.values())
        if idx != list(range(len(mapping))):
            raise InvalidSpec("label map indices must be exactly 0..K-1")
        inv = {v: k for k, v in mapping.items()}
        return cls(tuple(inv[i] for i in range(len(mapping))))

    @classmethod
    def from_file(cls, path) -> "LabelMap":
        obj = jsonio.read_json(path)
        if isinstance(obj, list):
            return cls(tuple(str(n) for n in obj))
        if isinstance(obj, dict):
            return cls.from_mapping({str(k): int(v) for k, v in obj.items()})
        raise InvalidSpec(f"{path}: label map must be a JSON list or object")

    @property
    def K(self) -> int:
        return len(self.names)

    def index(self, name: str) -> int:
        return self.names.index(name)

    def encode(self, values) -> np.ndarray:
        lookup = {n: i for i, n in enumerate(self.names)}
        try:
            return np.array([lookup[str(v)] for v in values], dtype=np.int64)
        except KeyError as exc:
            raise SchemaConflict(f"label {exc.args[0]!r} not in label map") from None

    def entries(self) -> list[tuple[str, int]]:
        return [(n, i) for i, n in enumerate(self.names)]

    def to_json(self) -> dict:
        return {n: i for i, n in enumerate(self.names)}


@dataclass(frozen=True)
class ColumnSpec:
    name: str
    kind: str  # "numeric" | "categorical"
    missing_count: int

    def to_json(self) -> dict:
        return {"name": self.name, "kind": self.kind, "missing_count": self.missing_count}


@dataclass(frozen=True)
class RawTable:
    """Column-major table of raw cells (``str``, ``float`` or ``None`` for missing)."""

    columns: dict[str, np.ndarray]
    source_files: tuple[str, ...] = ()
    row_count: int = 0

    def __post_init__(self):
        for name, col in self.columns.items():
            if len(col) != self.row_count:
                raise SchemaConflict(f"column {name!r} has {len(col)} rows, "
                                     f"expected {self.row_count}")

    @property
    def names(self) -> list[str]:
        return list(self.columns)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.columns[name]

    def take(self, rows) -> "RawTable":
        rows = np.asarray(rows, dtype=np.int64)
        return RawTable({k: v[rows] for k, v in self.columns.items()},
                        self.source_files, len(rows))

    def select(self, names: Sequence[str]) -> "RawTable":
        return RawTable({k: self.columns[k] for k in names}, self.source_files, self.row_count)


def is_missing(cell) -> bool:
    if cell is None:
        return True
    if isinstance(cell, float):
        return math.isnan(cell)
    return isinstance(cell, str) and cell.strip().lower() in MISSING_TOKENS


def parse_number(cell):
    """Return the cell as a finite float, or ``None`` if it is not one."""
    if isinstance(cell, (int, float, np.integer, np.floating)) and not isinstance(cell, bool):
        v = float(cell)
    else:
        try:
            v = float(str(cell).strip())
        except ValueError:
            return None
    return v if math.isfinite(v) else None


def _read_csv(path: Path) -> tuple[list[str], list[list[str]]]:
    try:
        with path.open(newline="", encoding="utf-8-sig") as fh:
            rows = list(csv.reader(fh))
    except (OSError, UnicodeDecodeError, csv.Error) as exc:
        raise IoFailure(f"{path}: {exc}") from exc
    if not rows:
        return [], []
    header = [h.strip() for h in rows[0]]
    if len(set(header)) != len(header):
        raise SchemaConflict(f"{path}: duplicate column names in header")
    body = [r for r in rows[1:] if r]
    for r in body:
        if len(r) != len(header):
            raise IoFailure(f"{path}: row with {len(r)} fields, header has {len(header)}")
    return header, body


def scan_dataset(root, label_map: LabelMap | None = None) -> tuple[RawTable, LabelMap]:
    """Read ``root/<class>/*.csv`` into one table with a trailing ``Label`` column.

    Files are merged in sorted path order.  Columns absent from a file are
    padded with missing cells.  A column that holds only numbers in one file
    but text in another raises :class:`SchemaConflict`.
    """
    root = Path(root)
    if not root.is_dir():
        raise IoFailure(f"{root}: not a directory")
    class_dirs = sorted(p for p in root.iterdir() if p.is_dir())
    files: list[tuple[str, Path]] = []
    for d in class_dirs:
        files.extend((d.name, f) for f in sorted(d.glob("*.csv")))
    files.sort(key=lambda t: str(t[1]))
    if not files:
        raise NoClassesFound(f"{root}: no class subdirectory contains a CSV file")

    parsed = []
    order: list[str] = []
    kinds: dict[str, tuple[str, str]] = {}
    for cls, path in files:
        header, body = _read_csv(path)
        if LABEL_COLUMN in header:
            raise SchemaConflict(f"{path}: column {LABEL_COLUMN!r} is reserved for the class label")
        for j, name in enumerate(header):
            if name not in kinds:
                order.append(name)
            cells = [r[j] for r in body if not is_missing(r[j])]
            if not cells:
                continue
            kind = "numeric" if all(parse_number(c) is not None for c in cells) else "text"
            prev = kinds.get(name)
            if prev is None or prev[0] is None:
                kinds[name] = (kind, str(path))
            elif prev[0] != kind:
                raise SchemaConflict(f"column {name!r} is {prev[0]} in {prev[1]} "
                                     f"but {kind} in {path}")
        for name in header:
            kinds.setdefault(name, (None, str(path)))
        parsed.append((cls, header, body))

    present = sorted({cls for cls, _, body in parsed if body})
    if not present:
        raise NoClassesFound(f"{root}: all class directories are empty")
    if label_map is None:
        label_map = LabelMap.from_names(present)
    else:
        unknown = [c for c in present if c not in label_map.names]
        if unknown:
            raise SchemaConflict(f"class folders {unknown} missing from label map")

    n = sum(len(body) for _, _, body in parsed)
    cols = {name: np.empty(n, dtype=object) for name in order}
    labels = np.empty(n, dtype=object)
    pos = 0
    for cls, header, body in parsed:
        m = len(body)
        idx = {name: j for j, name in enumerate(header)}
        for name in order:
            j = idx.get(name)
            if j is None:
                cols[name][pos:pos + m] = None
            else:
                cols[name][pos:pos + m] = [None if is_missing(r[j]) else r[j] for r in body]
        labels[pos:pos + m] = cls
        pos += m
    cols[LABEL_COLUMN] = labels
    table = RawTable(cols, tuple(str(p) for _, p in files), n)
    return table, label_map


def infer_schema(t: RawTable, on_all_missing: str = "raise",
                 exclude: Sequence[str] = ()) -> list[ColumnSpec]:
    """Classify each column as numeric (every present cell is a finite number) or categorical.

    ``on_all_missing`` is ``"raise"`` (the default) or ``"drop"``.
    """
    if t.row_count == 0:
        raise InvalidSpec("cannot infer a schema from an empty table")
    specs = []
    for name, col in t.columns.items():
        if name in exclude:
            continue
        present = [c for c in col if not is_missing(c)]
        n_missing = len(col) - len(present)
        if not present:
            if on_all_missing == "drop":
                continue
            raise AllMissingColumn(name)
        numeric = all(parse_number(c) is not None for c in present)
        specs.append(ColumnSpec(name, "numeric" if numeric else "categorical", n_missing))
    return specs


# -- synthetic data ----------------------------------------------------------

@dataclass(frozen=True)
class SynthSpec:
    n_rows: int = 1000
    n_numeric: int = 20
    n_categorical: int = 2
    n_classes: int = 10
    class_weights: tuple[float, ...] | None = None
    separability: float = 1.0
    n_informative: int | None = None
    missing_fraction: float = 0.0
    class_names: tuple[str, ...] | None = None

    @classmethod
    def from_dict(cls, d: Mapping) -> "SynthSpec":
        known = set(cls.__dataclass_fields__)
        extra = set(d) - known
        if extra:
            raise InvalidSpec(f"unknown synth keys: {sorted(extra)}")
        d = dict(d)
        for k in ("class_weights", "class_names"):
            if d.get(k) is not None:
                d[k] = tuple(d[k])
        return cls(**d)

    def validate(self) -> None:
        K = self.n_classes
        if K < 2:
            raise InvalidSpec("n_classes must be >= 2")
        if not 0.0 <= self.separability <= 1.0:
            raise InvalidSpec("separability must lie in [0, 1]")
        if self.n_numeric < 0 or self.n_categorical < 0 or self.n_numeric + self.n_categorical < 1:
            raise InvalidSpec("need at least one feature column")
        if self.n_rows < 2 * K:
            raise InvalidSpec("n_rows must allow at least 2 rows per class")
        if self.class_weights is not None:
            w = np.asarray(self.class_weights, dtype=float)
            if len(w) != K or np.any(w <= 0) or abs(w.sum() - 1.0) > 1e-9:
                raise InvalidSpec("class_weights must be K positive reals summing to 1")
        if self.class_names is not None and len(set(self.class_names)) != K:
            raise InvalidSpec("class_names must hold K distinct names")
        ni = self.n_informative
        if ni is not None and not 0 <= ni <= self.n_numeric:
            raise InvalidSpec("n_informative must lie in [0, n_numeric]")
        if not 0.0 <= self.missing_fraction < 1.0:
            raise InvalidSpec("missing_fraction must lie in [0, 1)")


#: distance in noise standard deviations between adjacent class means at full separability
CLUSTER_SPACING = 8.0


def _class_counts(n: int, weights: np.ndarray) -> np.ndarray:
    K = len(weights)
    base = np.full(K, 2, dtype=np.int64)
    raw = (n - 2 * K) * weights
    counts = np.floor(raw).astype(np.int64)
    rem = n - 2 * K - counts.sum()
    order = np.lexsort((np.arange(K), -(raw - counts)))
    counts[order[:rem]] += 1
    return base + counts


def synthesize_dataset(spec, seed: int) -> tuple[RawTable, LabelMap]:
    """Gaussian-cluster stand-in for captured UAV traffic.

    Informative numeric feature ``j`` puts class ``c`` at mean
    ``separability * CLUSTER_SPACING * perm_j(c)`` with unit noise; the rest
    are pure noise.  Categorical columns emit the class's own symbol with
    probability ``0.8 * separability`` and a uniform symbol otherwise.
    """
    if isinstance(spec, Mapping):
        spec = SynthSpec.from_dict(spec)
    spec.validate()
    rng = np.random.default_rng(seed)
    K, n = spec.n_classes, spec.n_rows
    w = (np.full(K, 1.0 / K) if spec.class_weights is None
         else np.asarray(spec.class_weights, dtype=float))
    width = len(str(K - 1))
    names = spec.class_names or tuple(f"class_{k:0{width}d}" for k in range(K))
    label_map = LabelMap.from_names(names)

    y_local = np.repeat(np.arange(K), _class_counts(n, w))
    rng.shuffle(y_local)

    n_inf = spec.n_numeric if spec.n_informative is None else spec.n_informative
    cols: dict[str, np.ndarray] = {}
    width_f = len(str(max(spec.n_numeric, spec.n_categorical, 1) - 1))
    for j in range(spec.n_numeric):
        offset = rng.normal(0.0, 5.0)
        scale = rng.uniform(0.5, 3.0)
        noise = rng.normal(size=n)
        if j < n_inf:
            means = spec.separability * CLUSTER_SPACING * rng.permutation(K)
            vals = means[y_local] + noise
        else:
            vals = noise
        cols[f"f{j:0{width_f}d}"] = (offset + scale * vals).astype(object)
    vocab = max(3, K)
    for j in range(spec.n_categorical):
        own = rng.permutation(vocab)[:K]
        pick = rng.random(n) < 0.8 * spec.separability
        rand = rng.integers(0, vocab, size=n)
        sym = np.where(pick, own[y_local], rand)
        cols[f"c{j:0{width_f}d}"] = np.array([f"v{s}" for s in sym], dtype=object)
    if spec.missing_fraction > 0:
        for name in list(cols):
            mask = rng.random(n) < spec.missing_fraction
            if mask.all():
                mask[0] = False
            cols[name][mask] = None
    cols[LABEL_COLUMN] = np.array([names[k] for k in y_local], dtype=object)
    return RawTable(cols, (), n), label_map


# -- canonical on-disk form --------------------------------------------------

def _sidecar(path: Path) -> Path:
    return path.with_name(path.name + ".json")


def write_canonical(t: RawTable, label_map: LabelMap, path,
                    schema: list[ColumnSpec] | None = None) -> Path:
    """Write a raw table as CSV with a trailing integer ``Label`` column plus a JSON sidecar."""
    path = Path(path)
    feats = [n for n in t.names if n != LABEL_COLUMN]
    if schema is None:
        schema = infer_schema(t, exclude=(LABEL_COLUMN,), on_all_missing="drop")
    y = label_map.encode(t[LABEL_COLUMN])
    cols = [t[n] for n in feats]

    def cell(v):
        if v is None:
            return ""
        if isinstance(v, float):
            return jsonio.format_float(v)
        return v

    rows = ([cell(c[i]) for c in cols] + [int(y[i])] for i in range(t.row_count))
    jsonio.atomic_write_text(path, jsonio.csv_text(feats + [LABEL_COLUMN], rows))
    jsonio.write_json({"kind": "raw", "columns": [s.to_json() for s in schema],
                       "label_map": label_map.to_json()}, _sidecar(path))
    return path


def read_canonical(path) -> tuple[RawTable, list[ColumnSpec], LabelMap]:
    path = Path(path)
    meta = jsonio.read_json(_sidecar(path))
    if meta.get("kind") != "raw":
        raise SchemaConflict(f"{path}: sidecar does not describe a raw table")
    label_map = LabelMap.from_mapping({k: int(v) for k, v in meta["label_map"].items()})
    schema = [ColumnSpec(c["name"], c["kind"], int(c["missing_count"])) for c in meta["columns"]]
    header, body = _read_csv(path)
    if not header or header[-1] != LABEL_COLUMN:
        raise SchemaConflict(f"{path}: last column must be {LABEL_COLUMN!r}")
    n = len(body)
    cols = {}
    for j, name in enumerate(header[:-1]):
        cols[name] = np.array([None if is_missing(r[j]) else r[j] for r in body] or [],
                              dtype=object).reshape(n)
    try:
        lab = [label_map.names[int(r[-1])] for r in body]
    except (ValueError, IndexError) as exc:
        raise SchemaConflict(f"{path}: bad label value ({exc})") from None
    cols[LABEL_COLUMN] = np.array(lab, dtype=object).reshape(n)
    return RawTable(cols, (str(path),), n), schema, label_map
