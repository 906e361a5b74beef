"""Equal-probability grid points per feature from a Gaussian KDE.

Each feature's grid starts at its lower bound, ends at its upper bound, and
places the interior points at the ``n/N`` quantiles of the kernel density
estimate of that feature, found by bisection on the closed-form CDF.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.special import ndtr

from .data import Dataset, FeatureBounds
from .errors import DataError

CDF_TOL = 1e-6


@dataclass(frozen=True)
class GridMatrix:
    """``values[n, j]`` is grid point ``n`` of feature ``j``; columns ascend."""

    values: np.ndarray
    bandwidths: np.ndarray
    degenerate: np.ndarray
    clamped: np.ndarray | None = None

    @property
    def N(self) -> int:
        return self.values.shape[0] - 1

    @property
    def n_features(self) -> int:
        return self.values.shape[1]

    def column(self, j: int) -> np.ndarray:
        return self.values[:, j]


def silverman_bandwidth(points) -> float:
    points = np.asarray(points, dtype=float)
    sd = points.std(ddof=1) if points.size > 1 else 0.0
    return 1.06 * max(sd, 1e-9) * points.size ** (-0.2)


def kde_cdf(points, bandwidth: float, x):
    """CDF of a Gaussian KDE: mean of ``Phi((x - p) / bandwidth)`` over the points."""
    if bandwidth <= 0:
        raise DataError("bandwidth must be positive")
    points = np.asarray(points, dtype=float).ravel()
    if points.size == 0:
        raise DataError("kde_cdf needs at least one point")
    x = np.asarray(x, dtype=float)
    out = ndtr((x[..., None] - points) / bandwidth).mean(axis=-1)
    return float(out) if out.ndim == 0 else out


def _bisect_quantiles(points, bandwidth, targets, lo, hi, max_iter=200):
    """Roots of ``kde_cdf = target`` on [lo, hi], clamped to the ends when out of range."""
    a = np.full(targets.shape, lo, dtype=float)
    b = np.full(targets.shape, hi, dtype=float)
    f_lo = kde_cdf(points, bandwidth, lo)
    f_hi = kde_cdf(points, bandwidth, hi)
    below = targets <= f_lo
    above = targets >= f_hi
    mid = 0.5 * (a + b)
    for _ in range(max_iter):
        mid = 0.5 * (a + b)
        f = kde_cdf(points, bandwidth, mid)
        done = (np.abs(f - targets) <= CDF_TOL * 1e-4) | ((b - a) <= 1e-13 * max(hi - lo, 1e-300))
        if np.all(done | below | above):
            break
        left = f < targets
        a = np.where(left & ~done, mid, a)
        b = np.where(~left & ~done, mid, b)
    roots = np.where(below, lo, np.where(above, hi, mid))
    return roots, below | above


def generate_grid(data: Dataset | np.ndarray, bounds: FeatureBounds, N: int,
                  bandwidth="silverman") -> GridMatrix:
    """Build the ``(N+1) x d`` grid matrix.

    Parameters
    ----------
    data : Dataset or array
        Samples whose marginals are estimated.
    bounds : FeatureBounds
        Grid endpoints; interior quantiles outside them are clamped.
    N : int
        Number of intervals per feature (``N + 1`` grid points).
    bandwidth : "silverman", float or sequence of floats
    """
    if N < 1:
        raise DataError("N must be >= 1")
    X = data.features if isinstance(data, Dataset) else np.asarray(data, dtype=float)
    d = X.shape[1]
    if bounds.lower.shape[0] != d:
        raise DataError("bounds do not match the number of features")
    if isinstance(bandwidth, str):
        if bandwidth != "silverman":
            raise DataError(f"unknown bandwidth rule {bandwidth!r}")
        bws = np.array([silverman_bandwidth(X[:, j]) for j in range(d)])
    else:
        bws = np.broadcast_to(np.asarray(bandwidth, dtype=float), (d,)).copy()
        if np.any(bws <= 0):
            raise DataError("bandwidths must be positive")
    G = np.empty((N + 1, d))
    clamped = np.zeros((N + 1, d), dtype=bool)
    degenerate = bounds.degenerate.copy()
    targets = np.arange(1, N) / N
    for j in range(d):
        L, U = bounds.lower[j], bounds.upper[j]
        G[0, j], G[N, j] = L, U
        if degenerate[j]:
            G[:, j] = L
            continue
        if N > 1:
            roots, cl = _bisect_quantiles(X[:, j], bws[j], targets, L, U)
            G[1:N, j] = roots
            clamped[1:N, j] = cl
        G[:, j] = np.maximum.accumulate(G[:, j])
    return GridMatrix(G, bws, degenerate, clamped)


def nearest_grid_index(G: GridMatrix | np.ndarray, j: int, v: float, side: str,
                       strict: bool = True) -> int | None:
    """Index of the grid point of feature ``j`` closest to ``v`` on one side of it.

    ``side="below"`` considers points ``< v`` (``<= v`` if not strict), ``"above"``
    points ``> v`` (``>= v``). Among equal candidates the lowest index wins
    below and the highest above. Returns ``None`` when no point qualifies.
    """
    col = G.column(j) if isinstance(G, GridMatrix) else np.asarray(G, dtype=float)
    if side == "below":
        ok = col < v if strict else col <= v
        if not ok.any():
            return None
        best = col[ok].max()
        return int(np.flatnonzero(ok & (col == best))[0])
    if side == "above":
        ok = col > v if strict else col >= v
        if not ok.any():
            return None
        best = col[ok].min()
        return int(np.flatnonzero(ok & (col == best))[-1])
    raise ValueError(f"side must be 'below' or 'above', not {side!r}")


def save_grid(G: GridMatrix, path, feature_names) -> None:
    """CSV with a leading ``# {json}`` header line, then feature names and N+1 rows."""
    header = {"N": G.N, "bandwidths": [float(b) for b in G.bandwidths],
              "degenerate": [bool(v) for v in G.degenerate]}
    with open(path, "w", newline="") as fh:
        fh.write("# " + json.dumps(header) + "\n")
        w = csv.writer(fh)
        w.writerow(list(feature_names))
        for row in G.values:
            w.writerow([format(v, ".17g") for v in row])


def load_grid(path) -> tuple[GridMatrix, list[str]]:
    lines = Path(path).read_text().splitlines()
    if not lines or not lines[0].startswith("# "):
        raise DataError(f"{path}: missing grid JSON header")
    header = json.loads(lines[0][2:])
    rows = list(csv.reader(lines[1:]))
    names = rows[0]
    values = np.array([[float(v) for v in r] for r in rows[1:] if r])
    if values.shape != (header["N"] + 1, len(names)):
        raise DataError(f"{path}: grid shape {values.shape} does not match header N={header['N']}")
    return GridMatrix(values, np.array(header["bandwidths"]), np.array(header["degenerate"])), names
