"""Boolean conjunction features from explanation triplets.

Each triplet (x, its PP, its PN) becomes one AND-clause over per-feature
intervals whose ends are grid points. For a feature where the PP departs
from the base value the clause keeps the grid-rounded PP side (the feature
must vary at least that much) and bounds the other side ``delta`` grid
steps past ``x``; for a feature where the PN departs from ``x`` it keeps the
grid-rounded PN side (the feature must not vary that much) and bounds the
other side ``delta`` steps before ``x``.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .data import BaseValues, Dataset
from .errors import ClauseError
from .explainer import ExplanationSet, ExplanationTriplet
from .gridding import GridMatrix, nearest_grid_index

Bound = tuple[float, bool]  # (value, inclusive)


@dataclass(frozen=True)
class Literal:
    feature: int
    lower: Bound | None = None
    upper: Bound | None = None

    def __post_init__(self):
        if self.lower is None and self.upper is None:
            raise ClauseError("a literal needs at least one bound")
        if self.lower is not None:
            object.__setattr__(self, "lower", (float(self.lower[0]), bool(self.lower[1])))
        if self.upper is not None:
            object.__setattr__(self, "upper", (float(self.upper[0]), bool(self.upper[1])))

    def is_empty(self) -> bool:
        if self.lower is None or self.upper is None:
            return False
        (lo, li), (hi, hi_inc) = self.lower, self.upper
        return lo > hi or (lo == hi and not (li and hi_inc))

    def contains(self, v: float) -> bool:
        if self.lower is not None:
            lo, inc = self.lower
            if not (v >= lo if inc else v > lo):
                return False
        if self.upper is not None:
            hi, inc = self.upper
            if not (v <= hi if inc else v < hi):
                return False
        return True

    def intersect(self, other: "Literal") -> "Literal":
        return Literal(self.feature, _tighter(self.lower, other.lower, lower=True),
                       _tighter(self.upper, other.upper, lower=False))

    def render(self, name: str, digits: int = 2) -> str:
        fmt = lambda v: f"{v:.{digits}f}"
        lo = up = ""
        if self.upper is not None:
            up = fmt(self.upper[0]) + (">=" if self.upper[1] else ">")
        if self.lower is not None:
            lo = (">=" if self.lower[1] else ">") + fmt(self.lower[0])
        if self.upper is not None and self.lower is None:
            return name + ("<=" if self.upper[1] else "<") + fmt(self.upper[0])
        return up + name + lo


def _tighter(a: Bound | None, b: Bound | None, lower: bool) -> Bound | None:
    if a is None:
        return b
    if b is None:
        return a
    if a[0] == b[0]:
        return (a[0], a[1] and b[1])
    if lower:
        return a if a[0] > b[0] else b
    return a if a[0] < b[0] else b


@dataclass(frozen=True)
class Clause:
    literals: tuple[Literal, ...]
    provenance: tuple[int, ...] = ()

    @property
    def key(self):
        return tuple((l.feature, l.lower, l.upper) for l in self.literals)

    @property
    def id(self) -> str:
        return hashlib.sha1(repr(self.key).encode()).hexdigest()[:12]

    @property
    def features(self) -> list[int]:
        return [l.feature for l in self.literals]

    def evaluate(self, x) -> int:
        return evaluate_clause(self, x)

    def render(self, feature_names: Sequence[str], digits: int = 2) -> str:
        return " & ".join(l.render(feature_names[l.feature], digits) for l in self.literals)

    def to_dict(self, feature_names: Sequence[str] | None = None) -> dict:
        out = {"id": self.id, "provenance": list(self.provenance), "literals": []}
        for l in self.literals:
            item = {"feature": l.feature}
            if feature_names is not None:
                item["name"] = feature_names[l.feature]
            item["lower"] = None if l.lower is None else {"value": l.lower[0], "inclusive": l.lower[1]}
            item["upper"] = None if l.upper is None else {"value": l.upper[0], "inclusive": l.upper[1]}
            out["literals"].append(item)
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "Clause":
        lits = []
        for item in d["literals"]:
            lo = item.get("lower")
            up = item.get("upper")
            lits.append(Literal(item["feature"],
                                None if lo is None else (lo["value"], lo["inclusive"]),
                                None if up is None else (up["value"], up["inclusive"])))
        return cls(tuple(lits), tuple(d.get("provenance", ())))


def _closest_inside(col, lo, hi, toward_hi: bool):
    """Grid value strictly inside (lo, hi) closest to ``hi`` (or to ``lo``)."""
    inside = col[(col > lo) & (col < hi)]
    if inside.size == 0:
        return None
    return float(inside.max() if toward_hi else inside.min())


def _pp_literal(col, N, b, p, x, delta, j):
    lower = upper = None
    if p > b:
        g = _closest_inside(col, b, p, toward_hi=True)
        if g is not None:
            lower = (g, True)
        s = nearest_grid_index(col, j, x, "above", strict=True)
        if s is not None:
            upper = (col[min(s + delta, N)], False)
    elif p < b:
        g = _closest_inside(col, p, b, toward_hi=False)
        if g is not None:
            upper = (g, False)
        s = nearest_grid_index(col, j, x, "below", strict=True)
        if s is not None:
            lower = (col[max(s - delta, 0)], True)
    if lower is None and upper is None:
        return None
    return Literal(j, lower, upper)


def _pn_literal(col, N, b, x, n, delta, j):
    # Without a grid point between x and n the PN side cannot be expressed at
    # grid resolution, and the regularising bound alone says nothing about n.
    lower = upper = None
    if x > b and n > x:
        g = _closest_inside(col, x, n, toward_hi=True)
        if g is None:
            return None
        upper = (g, False)
        s = nearest_grid_index(col, j, x, "below", strict=True)
        if s is not None:
            lower = (col[max(s - delta, 0)], True)
    elif x <= b and n < x:
        g = _closest_inside(col, n, x, toward_hi=False)
        if g is None:
            return None
        lower = (g, False)
        # strictly above x, so that x itself satisfies the exclusive upper bound
        s = nearest_grid_index(col, j, x, "above", strict=True)
        if s is not None:
            upper = (col[min(s + delta, N)], False)
    else:
        return None
    return Literal(j, lower, upper)


def clause_from_triplet(t: ExplanationTriplet, G: GridMatrix, b, delta: int) -> Clause | None:
    """The grid-rounded, ``delta``-regularised AND-clause of one triplet, or ``None``.

    ``None`` is returned when no feature yields a literal or when the PP and
    PN constraints on some feature do not overlap.
    """
    if delta < 0:
        raise ClauseError("delta must be >= 0")
    b = b.values if isinstance(b, BaseValues) else np.asarray(b, dtype=float)
    d = G.n_features
    if t.x.shape[0] != d or b.shape[0] != d:
        raise ClauseError(f"grid has {d} features, triplet has {t.x.shape[0]}, base has {b.shape[0]}")
    N = G.N
    lits = []
    for j in range(d):
        col = G.values[:, j]
        found = []
        lit = _pp_literal(col, N, b[j], t.pp[j], t.x[j], delta, j)
        if lit is not None:
            found.append(lit)
        if t.pn is not None and t.pn[j] != t.x[j]:
            lit = _pn_literal(col, N, b[j], t.x[j], t.pn[j], delta, j)
            if lit is not None:
                found.append(lit)
        if not found:
            continue
        merged = found[0] if len(found) == 1 else found[0].intersect(found[1])
        if merged.is_empty():
            return None
        lits.append(merged)
    if not lits:
        return None
    return Clause(tuple(lits), (t.sample_index,))


def evaluate_clause(c: Clause, x) -> int:
    x = np.asarray(x, dtype=float)
    if c.literals and x.shape[0] <= max(c.features):
        raise ClauseError("sample has fewer features than the clause references")
    return int(all(l.contains(x[l.feature]) for l in c.literals))


class ClauseEvaluator:
    """Vectorised evaluation of many clauses on many samples."""

    def __init__(self, clauses: Sequence[Clause], n_features: int):
        self.n_clauses = len(clauses)
        self.n_features = n_features
        groups: dict[tuple, list[tuple[int, float]]] = {}
        for ci, c in enumerate(clauses):
            for l in c.literals:
                if l.feature >= n_features:
                    raise ClauseError("clause references a feature beyond the data dimension")
                if l.lower is not None:
                    groups.setdefault((l.feature, "lo", l.lower[1]), []).append((ci, l.lower[0]))
                if l.upper is not None:
                    groups.setdefault((l.feature, "hi", l.upper[1]), []).append((ci, l.upper[0]))
        self.groups = [(key, np.array([c for c, _ in items]), np.array([v for _, v in items]))
                       for key, items in groups.items()]

    def __call__(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.n_features:
            raise ClauseError(f"expected {self.n_features} features, got {X.shape[1]}")
        out = np.ones((X.shape[0], self.n_clauses), dtype=bool)
        for (j, side, inclusive), cols, vals in self.groups:
            xj = X[:, j:j + 1]
            if side == "lo":
                ok = xj >= vals if inclusive else xj > vals
            else:
                ok = xj <= vals if inclusive else xj < vals
            out[:, cols] &= ok
        return out.astype(np.uint8)


def evaluate_clauses(clauses: Sequence[Clause], X, n_features: int | None = None) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    return ClauseEvaluator(clauses, n_features or X.shape[1])(X)


def generate_clauses(triplets: Iterable[ExplanationTriplet], G: GridMatrix, b, delta: int) -> list[Clause]:
    """Clauses for all triplets, deduplicated, in order of first occurrence."""
    order: dict = {}
    for t in triplets:
        c = clause_from_triplet(t, G, b, delta)
        if c is None:
            continue
        k = c.key
        if k in order:
            prev = order[k]
            order[k] = Clause(prev.literals, prev.provenance + c.provenance)
        else:
            order[k] = c
    return list(order.values())


@dataclass
class BooleanDataset:
    matrix: np.ndarray
    clauses: list[Clause]
    targets: np.ndarray
    target_kind: str = "blackbox"

    @property
    def clause_ids(self) -> list[str]:
        return [c.id for c in self.clauses]

    @property
    def shape(self):
        return self.matrix.shape


def build_boolean_dataset(triplets: ExplanationSet | Sequence[ExplanationTriplet], G: GridMatrix, b,
                          delta: int, data: Dataset, targets: str = "blackbox",
                          min_support: int = 0) -> BooleanDataset:
    """Materialise the 0/1 matrix of every deduplicated clause evaluated on ``data``.

    ``targets`` selects black-box predictions (``"blackbox"``) or the true labels.
    ``min_support`` drops clauses satisfied by fewer rows (off by default).
    """
    triplets = list(triplets)
    if len(triplets) != data.n_samples:
        raise ClauseError(f"{len(triplets)} triplets for {data.n_samples} samples")
    clauses = generate_clauses(triplets, G, b, delta)
    if not clauses:
        raise ClauseError("no clause survived; try a larger delta or more grid points")
    M = evaluate_clauses(clauses, data.features)
    if min_support > 0:
        keep = M.sum(axis=0) >= min_support
        if not keep.any():
            raise ClauseError(f"no clause reaches min_support={min_support}")
        clauses = [c for c, k in zip(clauses, keep) if k]
        M = M[:, keep]
    if targets == "blackbox":
        y = np.array([t.y_blackbox for t in triplets], dtype=int)
    elif targets == "true":
        y = np.asarray(data.labels, dtype=int)
    else:
        raise ClauseError(f"targets must be 'blackbox' or 'true', not {targets!r}")
    return BooleanDataset(M, clauses, y, targets)


def save_clauses(clauses: Sequence[Clause], path, feature_names: Sequence[str]) -> None:
    payload = {"feature_names": list(feature_names),
               "clauses": [c.to_dict(feature_names) for c in clauses]}
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=1)


def load_clauses(path) -> tuple[list[Clause], list[str]]:
    with open(path) as fh:
        payload = json.load(fh)
    return [Clause.from_dict(d) for d in payload["clauses"]], payload["feature_names"]


def format_rules(ranked: Sequence[tuple[Clause, float]], feature_names: Sequence[str],
                 title: str = "GBFL rank {rank} feature") -> str:
    """Rule text: one block per ranked clause, literals joined by `` & ``."""
    blocks = []
    for rank, (c, importance) in enumerate(ranked, start=1):
        blocks.append(f"{title.format(rank=rank)} (importance {importance:.4f})\n"
                      f"{c.render(feature_names)}")
    return "\n\n".join(blocks) + "\n"
