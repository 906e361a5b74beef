"""Tabular datasets, feature bounds, base values and stratified splitting."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import DataError


@dataclass(frozen=True)
class Dataset:
    """Numeric feature matrix with dense integer labels.

    ``label_mapping`` maps the original label strings to class ids; it is
    kept so that files written back out carry the original labels.
    """

    features: np.ndarray
    labels: np.ndarray
    feature_names: tuple[str, ...]
    n_classes: int
    label_mapping: dict[str, int] = field(default_factory=dict)

    def __post_init__(self):
        X = np.asarray(self.features, dtype=float)
        y = np.asarray(self.labels, dtype=int)
        if X.ndim != 2 or X.shape[0] < 1 or X.shape[1] < 1:
            raise DataError(f"features must be a non-empty 2-D matrix, got shape {X.shape}")
        if not np.all(np.isfinite(X)):
            raise DataError("features contain NaN or Inf")
        if y.shape != (X.shape[0],):
            raise DataError("labels must have one entry per row")
        if self.n_classes < 1 or y.min() < 0 or y.max() >= self.n_classes:
            raise DataError(f"labels must lie in [0, {self.n_classes})")
        if len(self.feature_names) != X.shape[1]:
            raise DataError("feature_names length does not match the number of columns")
        X.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "features", X)
        object.__setattr__(self, "labels", y)
        object.__setattr__(self, "feature_names", tuple(self.feature_names))

    @property
    def n_samples(self) -> int:
        return self.features.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    def subset(self, index) -> "Dataset":
        index = np.asarray(index)
        return Dataset(self.features[index], self.labels[index], self.feature_names,
                       self.n_classes, dict(self.label_mapping))

    def with_labels(self, labels) -> "Dataset":
        return Dataset(self.features, labels, self.feature_names, self.n_classes,
                       dict(self.label_mapping))

    def class_names(self) -> list[str]:
        inverse = {v: k for k, v in self.label_mapping.items()}
        return [inverse.get(k, str(k)) for k in range(self.n_classes)]

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return (self.feature_names == other.feature_names
                and self.n_classes == other.n_classes
                and self.label_mapping == other.label_mapping
                and np.array_equal(self.features, other.features)
                and np.array_equal(self.labels, other.labels))

    __hash__ = None


@dataclass(frozen=True)
class FeatureBounds:
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.lower, dtype=float)
        hi = np.asarray(self.upper, dtype=float)
        if lo.shape != hi.shape or lo.ndim != 1:
            raise DataError("lower and upper bounds must be vectors of equal length")
        if np.any(lo > hi):
            raise DataError("lower bound exceeds upper bound")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def span(self) -> np.ndarray:
        return self.upper - self.lower

    @property
    def degenerate(self) -> np.ndarray:
        """Mask of constant features (L_j == U_j)."""
        return self.upper == self.lower

    def contains(self, X) -> bool:
        X = np.asarray(X, dtype=float)
        return bool(np.all((X >= self.lower) & (X <= self.upper)))


@dataclass(frozen=True)
class BaseValues:
    values: np.ndarray
    strategy: str = "explicit"

    def __post_init__(self):
        object.__setattr__(self, "values", np.asarray(self.values, dtype=float))


def _read_rows(path):
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
    except FileNotFoundError:
        raise DataError(f"no such file: {path}") from None
    except UnicodeDecodeError as exc:
        raise DataError(f"{path}: not valid UTF-8 ({exc})") from None
    rows = [r for r in rows if r]
    if not rows:
        raise DataError(f"{path}: empty file")
    return rows


def load_csv(path, label_column: str | None = None) -> Dataset:
    """Read a headered CSV file into a :class:`Dataset`.

    Parameters
    ----------
    path : str or Path
    label_column : str, optional
        Name of the label column. Defaults to the last column.

    Labels are remapped to ``0..K-1`` in order of first appearance.
    """
    rows = _read_rows(path)
    header, body = rows[0], rows[1:]
    if not body:
        raise DataError(f"{path}: header only, no data rows")
    if label_column is None:
        label_column = header[-1]
    if label_column not in header:
        raise DataError(f"{path}: label column {label_column!r} not found in header {header}")
    li = header.index(label_column)
    names = [h for i, h in enumerate(header) if i != li]
    X = np.empty((len(body), len(names)))
    mapping: dict[str, int] = {}
    y = np.empty(len(body), dtype=int)
    for r, row in enumerate(body, start=2):
        if len(row) != len(header):
            raise DataError(f"{path}: row {r} has {len(row)} fields, expected {len(header)}")
        c = 0
        for i, cell in enumerate(row):
            if i == li:
                continue
            try:
                X[r - 2, c] = float(cell)
            except ValueError:
                raise DataError(
                    f"{path}: row {r}, column {header[i]!r}: non-numeric value {cell!r}"
                ) from None
            c += 1
        lab = row[li].strip()
        y[r - 2] = mapping.setdefault(lab, len(mapping))
    if not np.all(np.isfinite(X)):
        bad = np.argwhere(~np.isfinite(X))[0]
        raise DataError(f"{path}: row {bad[0] + 2}, column {names[bad[1]]!r}: NaN/Inf not allowed")
    return Dataset(X, y, tuple(names), len(mapping), mapping)


def save_csv(data: Dataset, path, label_column: str = "label") -> None:
    """Write ``data`` with 17 significant digits so that :func:`load_csv` restores it exactly."""
    names = data.class_names()
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(list(data.feature_names) + [label_column])
        for row, lab in zip(data.features, data.labels):
            w.writerow([format(v, ".17g") for v in row] + [names[lab]])


def save_label_mapping(data: Dataset, path) -> None:
    Path(path).write_text(json.dumps(data.label_mapping, indent=2, sort_keys=True))


def derive_bounds(data: Dataset) -> FeatureBounds:
    X = data.features if isinstance(data, Dataset) else np.asarray(data, dtype=float)
    if X.shape[0] < 1:
        raise DataError("cannot derive bounds from an empty dataset")
    return FeatureBounds(X.min(axis=0), X.max(axis=0))


def lower_median(X) -> np.ndarray:
    """Column-wise median taking the lower of the two middle values for even n."""
    X = np.sort(np.asarray(X, dtype=float), axis=0)
    return X[(X.shape[0] - 1) // 2]


def derive_base_values(data: Dataset, strategy="median",
                       bounds: FeatureBounds | None = None) -> BaseValues:
    """Base values: ``"median"``, ``"zeros"`` (clamped into the bounds) or an explicit vector."""
    bounds = bounds if bounds is not None else derive_bounds(data)
    d = data.n_features
    if isinstance(strategy, str):
        if strategy == "median":
            return BaseValues(lower_median(data.features), "median")
        if strategy == "zeros":
            return BaseValues(np.clip(np.zeros(d), bounds.lower, bounds.upper), "zeros")
        raise DataError(f"unknown base-value strategy {strategy!r}")
    b = np.asarray(strategy, dtype=float)
    if b.shape != (d,):
        raise DataError(f"explicit base values must have length {d}, got {b.shape}")
    if np.any(b < bounds.lower) or np.any(b > bounds.upper):
        raise DataError("explicit base values lie outside the feature bounds")
    return BaseValues(b, "explicit")


def split_indices(labels: Sequence[int], test_fraction: float, seed: int):
    """Stratified, seed-deterministic train/test index split."""
    if not 0.0 < test_fraction < 1.0:
        raise DataError("test_fraction must lie in (0, 1)")
    labels = np.asarray(labels)
    rng = np.random.default_rng(seed)
    train, test = [], []
    for k in np.unique(labels):
        idx = np.flatnonzero(labels == k)
        if idx.size < 2:
            raise DataError(f"class {k} has {idx.size} sample(s); at least 2 needed to stratify")
        idx = rng.permutation(idx)
        n_test = int(np.clip(round(test_fraction * idx.size), 1, idx.size - 1))
        test.append(idx[:n_test])
        train.append(idx[n_test:])
    return np.sort(np.concatenate(train)), np.sort(np.concatenate(test))


def split(data: Dataset, test_fraction: float = 0.25, seed: int = 0) -> tuple[Dataset, Dataset]:
    tr, te = split_indices(data.labels, test_fraction, seed)
    return data.subset(tr), data.subset(te)


def stratified_folds(labels, n_folds: int, seed: int) -> list[np.ndarray]:
    """Assign each sample to one of ``n_folds`` folds, class by class round-robin."""
    labels = np.asarray(labels)
    if n_folds < 2:
        raise DataError("need at least 2 folds")
    if labels.size < n_folds:
        raise DataError(f"{labels.size} samples cannot fill {n_folds} folds")
    rng = np.random.default_rng(seed)
    fold_of = np.empty(labels.size, dtype=int)
    offset = 0
    for k in np.unique(labels):
        idx = rng.permutation(np.flatnonzero(labels == k))
        fold_of[idx] = (np.arange(idx.size) + offset) % n_folds
        offset += idx.size
    return [np.flatnonzero(fold_of == f) for f in range(n_folds)]
