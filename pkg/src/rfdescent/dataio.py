"""Tabular dataset loading, one-hot preprocessing and stratified folds."""

from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

KINDS = ("numeric", "categorical", "label")
MISSING_TOKENS = frozenset({"", "nan", "NaN", "NAN", "NA", "N/A", "null", "None"})


class DataError(ValueError):
    """Raised for malformed tables, schemas and fold requests."""


@dataclass(frozen=True)
class RawTable:
    name: str
    columns: tuple[str, ...]
    column_kinds: tuple[str, ...]
    rows: tuple[tuple[str, ...], ...]

    def __post_init__(self):
        if len(self.columns) != len(self.column_kinds):
            raise DataError("columns and column_kinds differ in length")
        bad = [k for k in self.column_kinds if k not in KINDS]
        if bad:
            raise DataError(f"unknown column kind(s) {bad}")
        if self.column_kinds.count("label") != 1:
            raise DataError("table needs exactly one label column")
        for i, row in enumerate(self.rows):
            if len(row) != len(self.columns):
                raise DataError(f"row {i} has {len(row)} cells, expected {len(self.columns)}")

    @property
    def label_column(self) -> int:
        return self.column_kinds.index("label")


@dataclass(frozen=True, eq=False)
class Dataset:
    """Encoded features ``X`` (N x d) and one-hot labels ``Y`` (N x C)."""

    X: np.ndarray
    Y: np.ndarray
    feature_names: tuple[str, ...] = ()
    class_names: tuple[str, ...] = ()
    name: str = ""

    def __post_init__(self):
        X = np.ascontiguousarray(self.X, dtype=np.float64)
        Y = np.ascontiguousarray(self.Y, dtype=np.float64)
        if X.ndim != 2 or Y.ndim != 2 or X.shape[0] != Y.shape[0]:
            raise DataError(f"shape mismatch X{X.shape} Y{Y.shape}")
        if X.shape[0] < 1 or X.shape[1] < 1 or Y.shape[1] < 2:
            raise DataError("need N >= 1, d >= 1 and C >= 2")
        if not np.all(np.isfinite(X)):
            raise DataError("X contains non-finite values")
        if not (np.all((Y == 0) | (Y == 1)) and np.all(Y.sum(axis=1) == 1)):
            raise DataError("Y rows must be one-hot")
        X.setflags(write=False)
        Y.setflags(write=False)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "Y", Y)
        object.__setattr__(self, "labels", np.argmax(Y, axis=1).astype(np.intp))

    labels: np.ndarray = field(init=False, repr=False, compare=False)

    @property
    def N(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]

    @property
    def C(self) -> int:
        return self.Y.shape[1]

    @property
    def y_signed(self) -> np.ndarray:
        """{-1,+1} view of binary labels (class 1 is +1)."""
        if self.C != 2:
            raise DataError("signed labels need C == 2")
        return np.where(self.labels == 1, 1.0, -1.0)

    @classmethod
    def from_arrays(cls, X, labels, n_classes: int | None = None, name: str = "") -> "Dataset":
        labels = np.asarray(labels, dtype=np.intp)
        C = int(n_classes if n_classes is not None else max(2, labels.max() + 1))
        Y = np.zeros((labels.shape[0], C))
        Y[np.arange(labels.shape[0]), labels] = 1.0
        return cls(np.asarray(X, dtype=np.float64), Y, name=name)

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx, dtype=np.intp)
        return Dataset(self.X[idx], self.Y[idx], self.feature_names, self.class_names, self.name)


@dataclass(frozen=True, eq=False)
class FoldSpec:
    k: int
    assignments: np.ndarray
    seed: int

    def train_test(self, fold: int) -> tuple[np.ndarray, np.ndarray]:
        test = np.flatnonzero(self.assignments == fold)
        train = np.flatnonzero(self.assignments != fold)
        return train, test


def load_table(path, schema: Mapping[str, str], name: str | None = None) -> RawTable:
    """Parse a headed, comma separated UTF-8 file.

    ``schema`` maps every header column to one of ``numeric``, ``categorical``
    or ``label``.
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: no data rows") from None
        except csv.Error as exc:
            raise DataError(f"{path}: line 1: {exc}") from None
        header = [h.strip() for h in header]
        unknown = [h for h in header if h not in schema]
        if unknown:
            raise DataError(f"{path}: column(s) {unknown} not in schema")
        missing = [c for c in schema if c not in header]
        if missing:
            raise DataError(f"{path}: schema column(s) {missing} not in header")
        rows = []
        try:
            for row in reader:
                if not row or (len(row) == 1 and not row[0].strip()):
                    continue
                if len(row) != len(header):
                    raise DataError(
                        f"{path}: line {reader.line_num}: expected {len(header)} cells, got {len(row)}"
                    )
                rows.append(tuple(c.strip() for c in row))
        except csv.Error as exc:
            raise DataError(f"{path}: line {reader.line_num}: {exc}") from None
    if not rows:
        raise DataError(f"{path}: no data rows")
    kinds = tuple(schema[h] for h in header)
    return RawTable(name or path.stem, tuple(header), kinds, tuple(rows))


def _is_missing(cell) -> bool:
    if cell is None:
        return True
    if isinstance(cell, float):
        return math.isnan(cell)
    return str(cell).strip() in MISSING_TOKENS


def preprocess(raw: RawTable) -> Dataset:
    """Drop rows with missing cells and one-hot encode categoricals and label.

    Categories are ordered by sorted string value so the encoding does not
    depend on row order.
    """
    numeric = [i for i, k in enumerate(raw.column_kinds) if k == "numeric"]
    rows = []
    for row in raw.rows:
        if any(_is_missing(c) for c in row):
            continue
        if any(not math.isfinite(_to_float(row[i], raw, i)) for i in numeric):
            continue
        rows.append(row)
    if not rows:
        raise DataError(f"{raw.name}: every row was dropped as missing")

    blocks, names = [], []
    for j, kind in enumerate(raw.column_kinds):
        col = [r[j] for r in rows]
        if kind == "numeric":
            blocks.append(np.array([_to_float(c, raw, j) for c in col])[:, None])
            names.append(raw.columns[j])
        elif kind == "categorical":
            levels = sorted(set(map(str, col)))
            codes = np.searchsorted(levels, np.array(col, dtype=str))
            blocks.append(np.eye(len(levels))[codes])
            names.extend(f"{raw.columns[j]}={lv}" for lv in levels)

    lab = [str(r[raw.label_column]) for r in rows]
    classes = sorted(set(lab))
    if len(classes) < 2:
        raise DataError(f"{raw.name}: label column has a single class {classes}")
    Y = np.eye(len(classes))[np.searchsorted(classes, np.array(lab, dtype=str))]
    if not blocks:
        raise DataError(f"{raw.name}: no feature columns")
    X = np.hstack(blocks)
    return Dataset(X, Y, tuple(names), tuple(classes), raw.name)


def _to_float(cell, raw: RawTable, j: int) -> float:
    try:
        return float(cell)
    except (TypeError, ValueError):
        raise DataError(f"{raw.name}: column {raw.columns[j]!r} value {cell!r} is not numeric") from None


def stratified_kfold(ds: Dataset, k: int, seed: int) -> FoldSpec:
    """Shuffle each class with ``seed`` and deal its members round-robin into folds.

    Dealing continues where the previous class stopped so fold sizes stay
    within one of each other as well.
    """
    if k < 2:
        raise DataError("k must be >= 2")
    counts = np.bincount(ds.labels, minlength=ds.C)
    small = [c for c in range(ds.C) if 0 < counts[c] < k]
    if small:
        raise DataError(f"class(es) {small} have fewer than k={k} members")
    rng = np.random.default_rng(seed)
    assignments = np.empty(ds.N, dtype=np.intp)
    offset = 0
    for c in range(ds.C):
        members = rng.permutation(np.flatnonzero(ds.labels == c))
        assignments[members] = (offset + np.arange(members.size)) % k
        offset = (offset + members.size) % k
    assignments.setflags(write=False)
    return FoldSpec(k, assignments, seed)


# -- manifest ---------------------------------------------------------------

def default_data_dir() -> Path:
    env = os.environ.get("RFDESCENT_DATA")
    if env:
        return Path(env)
    here = Path(__file__).resolve()
    for parent in here.parents:
        if (parent / "data" / "manifest.json").exists():
            return parent / "data"
    return Path.cwd() / "data"


def read_manifest(data_dir=None) -> dict:
    data_dir = Path(data_dir) if data_dir is not None else default_data_dir()
    path = data_dir / "manifest.json"
    if not path.exists():
        raise DataError(f"no dataset manifest at {path}")
    return json.loads(path.read_text(encoding="utf-8"))


def dataset_available(name: str, data_dir=None) -> bool:
    data_dir = Path(data_dir) if data_dir is not None else default_data_dir()
    try:
        entry = read_manifest(data_dir)[name]
    except (DataError, KeyError):
        return False
    return (data_dir / entry["path"]).exists()


def load_dataset(name: str, data_dir=None) -> Dataset:
    """Load and preprocess a dataset registered in ``manifest.json``."""
    data_dir = Path(data_dir) if data_dir is not None else default_data_dir()
    manifest = read_manifest(data_dir)
    if name not in manifest:
        raise DataError(f"dataset {name!r} not in manifest (known: {sorted(manifest)})")
    entry = manifest[name]
    path = data_dir / entry["path"]
    if not path.exists():
        raise DataError(f"dataset {name!r}: file {path} not found")
    schema = dict(entry["columns"])
    if entry.get("label"):
        schema[entry["label"]] = "label"
    return preprocess(load_table(path, schema, name=name))


def raw_from_records(records: Sequence[Sequence], columns: Sequence[str], kinds: Sequence[str],
                     name: str = "table") -> RawTable:
    return RawTable(name, tuple(columns), tuple(kinds),
                    tuple(tuple("" if c is None else str(c) for c in r) for r in records))
