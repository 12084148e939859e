"""Datasets, on-disk formats, one-vs-one task construction and splits.

The sparse text format has one sample per line::

    <label> <index>:<value> <index>:<value> ...

with 1-based, strictly ascending feature indices. Absent indices are zero.
"""
from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field
from itertools import combinations
from pathlib import Path

import numpy as np

from .errors import ConstructionError, InputError, ParseError, SplitError

SPLITS = ("train", "validation", "test")


@dataclass
class TaskDataset:
    """One binary task: features, +-1 labels and index lists per split.

    Without explicit splits every sample is a training sample.
    """

    name: str
    X: np.ndarray
    y: np.ndarray
    split: dict = field(default_factory=dict)

    def __post_init__(self):
        self.X = np.atleast_2d(np.asarray(self.X, dtype=float))
        self.y = np.asarray(self.y, dtype=float).ravel()
        n = self.y.size
        if n == 0:
            raise ConstructionError(f"task {self.name!r} has no samples")
        if self.X.shape[0] != n:
            raise ConstructionError(f"task {self.name!r}: {self.X.shape[0]} rows but {n} labels")
        if not np.all((self.y == 1) | (self.y == -1)):
            raise ConstructionError(f"task {self.name!r}: labels must be +1 or -1")
        if not self.split:
            self.split = {"train": np.arange(n), "validation": np.arange(0), "test": np.arange(0)}
        self.split = {k: np.asarray(self.split.get(k, []), dtype=np.intp) for k in SPLITS}
        allidx = np.concatenate([self.split[k] for k in SPLITS])
        if allidx.size != n or not np.array_equal(np.sort(allidx), np.arange(n)):
            raise ConstructionError(f"task {self.name!r}: splits must partition the {n} samples")
        ytr = self.y[self.split["train"]]
        if not (np.any(ytr > 0) and np.any(ytr < 0)):
            raise ConstructionError(f"task {self.name!r}: training split must contain both classes")

    @property
    def n_features(self) -> int:
        return self.X.shape[1]

    def part(self, which: str):
        idx = self.split[which]
        return self.X[idx], self.y[idx]

    @property
    def X_train(self) -> np.ndarray:
        return self.X[self.split["train"]]

    @property
    def y_train(self) -> np.ndarray:
        return self.y[self.split["train"]]


@dataclass
class Manifest:
    tasks: list
    feature_dim: int
    construction: dict
    root: Path = Path(".")

    @classmethod
    def load(cls, path) -> "Manifest":
        path = Path(path)
        try:
            doc = json.loads(path.read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise InputError(f"cannot read manifest {path}: {exc}") from None
        return cls.from_dict(doc, root=path.parent)

    @classmethod
    def from_dict(cls, doc: dict, root=".") -> "Manifest":
        if not isinstance(doc, dict) or "tasks" not in doc or "feature_dim" not in doc:
            raise InputError("manifest needs 'feature_dim' and 'tasks'")
        construction = doc.get("construction", "native")
        if isinstance(construction, str):
            construction = {"type": construction}
        kind = construction.get("type")
        if kind not in ("native", "one_vs_one"):
            raise InputError(f"unknown construction {kind!r}")
        tasks = []
        for entry in doc["tasks"]:
            if "name" not in entry or "path" not in entry:
                raise InputError("every manifest task needs 'name' and 'path'")
            tasks.append((str(entry["name"]), str(entry["path"])))
        if not tasks:
            raise InputError("manifest lists no tasks")
        d = int(doc["feature_dim"])
        if d < 1:
            raise InputError("feature_dim must be positive")
        return cls(tasks, d, construction, Path(root))

    def to_dict(self) -> dict:
        return {
            "feature_dim": self.feature_dim,
            "construction": self.construction,
            "tasks": [{"name": n, "path": p} for n, p in self.tasks],
        }

    def resolve(self, p) -> Path:
        p = Path(p)
        return p if p.is_absolute() else self.root / p

    def build_tasks(self, dense: bool = False) -> list[TaskDataset]:
        load = load_dense_csv if dense else load_sparse_file
        if self.construction["type"] == "native":
            out = []
            for name, p in self.tasks:
                X, y = load(self.resolve(p), n_features=self.feature_dim)
                out.append(TaskDataset(name, X, y))
            return out
        Xs, ys = [], []
        for _, p in self.tasks:
            X, y = load(self.resolve(p), n_features=self.feature_dim)
            Xs.append(X)
            ys.append(y)
        X = np.vstack(Xs) if Xs else np.zeros((0, self.feature_dim))
        y = np.concatenate(ys) if ys else np.zeros(0)
        classes = self.construction.get("classes")
        pairs = None if classes is None else list(combinations(classes, 2))
        return one_vs_one(X, y, pairs)


def _parse_label(tok, lineno, path):
    try:
        v = float(tok)
    except ValueError:
        raise ParseError(f"bad label {tok!r}", lineno, path) from None
    if not math.isfinite(v):
        raise ParseError(f"non-finite label {tok!r}", lineno, path)
    return v


def load_sparse_file(path, n_features: int | None = None):
    """Parse a sparse text file into a dense matrix and a label vector."""
    rows, labels = [], []
    max_idx = 0
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            toks = line.split()
            labels.append(_parse_label(toks[0], lineno, path))
            feats = {}
            prev = 0
            for tok in toks[1:]:
                idx_s, sep, val_s = tok.partition(":")
                if sep != ":" or not idx_s or not val_s or ":" in val_s:
                    raise ParseError(f"malformed feature {tok!r}", lineno, path)
                try:
                    idx = int(idx_s)
                except ValueError:
                    raise ParseError(f"bad feature index {idx_s!r}", lineno, path) from None
                if idx < 1:
                    raise ParseError(f"feature index {idx} must be >= 1", lineno, path)
                if idx <= prev:
                    raise ParseError(f"feature index {idx} not ascending after {prev}", lineno, path)
                try:
                    val = float(val_s)
                except ValueError:
                    raise ParseError(f"bad feature value {val_s!r}", lineno, path) from None
                if not math.isfinite(val):
                    raise ParseError(f"non-finite feature value {val_s!r}", lineno, path)
                if n_features is not None and idx > n_features:
                    raise ParseError(f"feature index {idx} exceeds dimension {n_features}", lineno, path)
                feats[idx] = val
                prev = idx
            max_idx = max(max_idx, prev)
            rows.append(feats)
    d = n_features if n_features is not None else max_idx
    X = np.zeros((len(rows), d))
    for r, feats in enumerate(rows):
        for idx, val in feats.items():
            X[r, idx - 1] = val
    return X, np.asarray(labels, dtype=float)


def write_sparse_file(path, X, y):
    """Write samples in the sparse text format; zeros are omitted."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float).ravel()
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for row, label in zip(X, y):
            lab = f"{int(label):+d}" if float(label).is_integer() else repr(float(label))
            parts = [lab] + [f"{j + 1}:{float(row[j])!r}" for j in np.flatnonzero(row)]
            fh.write(" ".join(parts) + "\n")


def load_dense_csv(path, n_features: int | None = None):
    """Dense CSV with the label in the first column."""
    try:
        data = np.loadtxt(path, delimiter=",", ndmin=2)
    except ValueError as exc:
        raise ParseError(str(exc), path=path) from None
    if data.size == 0:
        return np.zeros((0, n_features or 0)), np.zeros(0)
    X, y = data[:, 1:], data[:, 0]
    if n_features is not None and X.shape[1] != n_features:
        raise ParseError(f"expected {n_features} features, found {X.shape[1]}", path=path)
    return X, y


def _class_name(c) -> str:
    c = float(c)
    return str(int(c)) if c.is_integer() else repr(c)


def one_vs_one(X, labels, class_pairs=None) -> list[TaskDataset]:
    """One binary task per class pair ``(a, b)``: ``a`` is +1, ``b`` is -1."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    labels = np.asarray(labels).ravel()
    classes = np.unique(labels)
    if class_pairs is None:
        if classes.size < 2:
            raise ConstructionError(f"one-vs-one needs at least 2 classes, found {classes.size}")
        class_pairs = list(combinations(classes.tolist(), 2))
    tasks = []
    for a, b in class_pairs:
        ia = np.flatnonzero(labels == a)
        ib = np.flatnonzero(labels == b)
        if ia.size == 0 or ib.size == 0:
            empty = a if ia.size == 0 else b
            raise ConstructionError(f"class {_class_name(empty)} has no samples for pair ({a}, {b})")
        idx = np.concatenate([ia, ib])
        y = np.concatenate([np.ones(ia.size), -np.ones(ib.size)])
        tasks.append(TaskDataset(f"{_class_name(a)}_vs_{_class_name(b)}", X[idx], y))
    return tasks


def _largest_remainder(total, weights):
    weights = np.asarray(weights, dtype=float)
    raw = total * weights / weights.sum()
    base = np.floor(raw).astype(int)
    short = total - base.sum()
    order = sorted(range(len(raw)), key=lambda i: (-(raw[i] - base[i]), i))
    for i in order[:short]:
        base[i] += 1
    return base


def stratified_split(ds: TaskDataset, train_frac: float, seed: int, balanced: bool = False) -> TaskDataset:
    """Stratified train/validation/test split; the held-out part is halved.

    Validation gets the extra sample when the remainder is odd. With
    ``balanced`` every class contributes the same number of training samples.
    """
    if not 0 < train_frac < 1:
        raise SplitError(f"train_frac must be in (0, 1), got {train_frac}")
    rng = np.random.default_rng(seed)
    classes = np.unique(ds.y)
    members = [np.flatnonzero(ds.y == c) for c in classes]
    counts = np.array([m.size for m in members])
    if np.any(counts < 2):
        raise SplitError(f"task {ds.name!r}: every class needs at least 2 samples, got {counts.tolist()}")
    n = ds.y.size
    if balanced:
        k = int(math.floor(train_frac * n / classes.size + 0.5))
        per_class = np.full(classes.size, max(k, 1))
    else:
        per_class = _largest_remainder(int(math.floor(train_frac * n + 0.5)), counts)
        per_class = np.maximum(per_class, 1)
    if np.any(per_class >= counts):
        raise SplitError(
            f"task {ds.name!r}: class sizes {counts.tolist()} too small for {per_class.tolist()} training samples"
        )
    train, rest = [], []
    for m, k in zip(members, per_class):
        perm = rng.permutation(m)
        train.append(perm[:k])
        rest.append(perm[k:])
    # interleave the held-out samples class-proportionally before halving
    keyed = [(j / r.size, ci, j, idx) for ci, r in enumerate(rest) for j, idx in enumerate(r)]
    keyed.sort()
    pooled = np.array([k[3] for k in keyed], dtype=np.intp)
    n_val = (pooled.size + 1) // 2
    split = {
        "train": np.sort(np.concatenate(train)),
        "validation": np.sort(pooled[:n_val]),
        "test": np.sort(pooled[n_val:]),
    }
    return TaskDataset(ds.name, ds.X, ds.y, split)


def minmax_scale(tasks, feature_range=(0.0, 1.0)):
    """Scale features to ``feature_range`` using training-split statistics pooled over tasks."""
    Xtr = np.vstack([t.X_train for t in tasks])
    lo, hi = Xtr.min(axis=0), Xtr.max(axis=0)
    span = np.where(hi > lo, hi - lo, 1.0)
    a, b = feature_range
    return [TaskDataset(t.name, a + (t.X - lo) / span * (b - a), t.y, t.split) for t in tasks]


def write_manifest(path, manifest: Manifest):
    Path(path).write_text(json.dumps(manifest.to_dict(), indent=2) + "\n", encoding="utf-8")


def relpath(p, start) -> str:
    return os.path.relpath(p, start)
