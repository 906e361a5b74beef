"""Pertinent positives and negatives with confidence-score access only.

Both searches minimise a hinge margin on the black-box confidences plus an
elastic-net penalty on the deviation from an anchor point (the base values
for a pertinent positive, the sample itself for a pertinent negative).
The optimiser is projected proximal gradient with backtracking; the margin
gradient is estimated by central finite differences. Penalties and steps
are measured in range-normalised units ``(v - L) / (U - L)`` so that one
configuration works across features of very different scales.

Many samples are optimised together: every model query is one batch.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from .blackbox import BlackBoxModel
from .data import BaseValues, Dataset, FeatureBounds
from .errors import ExplainerError, GBFLError

log = logging.getLogger(__name__)

PP, PN = "PP", "PN"


@dataclass
class ExplainerConfig:
    kappa: float = 0.1
    l1_strength: float = 0.1
    l2_strength: float = 1.0
    max_iters: int = 500
    step_size: float = 0.05
    fd_step: float = 1e-4
    snap_epsilon: float = 1e-3
    seed: int = 0
    # weight on the margin term; a PN search that finds nothing is retried
    # with the next (larger) weight
    margin_weights: tuple[float, ...] = (1.0, 10.0, 100.0)
    max_backtracks: int = 20
    batch_size: int = 1024
    # "probability" compares confidences directly; "log" compares log-confidences,
    # which keeps gradients alive where a model's softmax saturates
    margin_space: str = "log"

    def __post_init__(self):
        if self.kappa < 0 or self.l1_strength < 0 or self.l2_strength < 0:
            raise ExplainerError("kappa, l1_strength and l2_strength must be >= 0")
        if self.max_iters < 1:
            raise ExplainerError("max_iters must be >= 1")
        if self.fd_step <= 0 or self.step_size <= 0:
            raise ExplainerError("fd_step and step_size must be > 0")
        if self.snap_epsilon < 0:
            raise ExplainerError("snap_epsilon must be >= 0")
        self.margin_weights = tuple(float(c) for c in self.margin_weights)
        if not self.margin_weights or min(self.margin_weights) <= 0:
            raise ExplainerError("margin_weights must be non-empty and positive")
        if self.margin_space not in ("probability", "log"):
            raise ExplainerError("margin_space must be 'probability' or 'log'")


@dataclass
class ExplanationTriplet:
    sample_index: int
    x: np.ndarray
    y_blackbox: int
    pp: np.ndarray
    pn: np.ndarray | None = None
    y_pn: int | None = None
    pp_sparsity: int = 0
    pn_sparsity: int | None = None
    diagnostics: dict = field(default_factory=dict)

    @property
    def pp_fallback(self) -> bool:
        return bool(self.diagnostics.get("pp_fallback", False))


@dataclass
class ExplanationSet:
    """Triplets aligned with the rows of the explained dataset."""

    triplets: list[ExplanationTriplet]
    base: np.ndarray
    errors: dict[int, str] = field(default_factory=dict)

    def __len__(self):
        return len(self.triplets)

    def __iter__(self) -> Iterator[ExplanationTriplet]:
        return iter(self.triplets)

    def __getitem__(self, i):
        if isinstance(i, (slice, np.ndarray, list)):
            idx = range(len(self))[i] if isinstance(i, slice) else i
            return ExplanationSet([self.triplets[j] for j in idx], self.base)
        return self.triplets[i]

    def subset(self, index) -> "ExplanationSet":
        return self[list(np.asarray(index))]

    @property
    def X(self):
        return np.array([t.x for t in self.triplets])

    @property
    def PP(self):
        return np.array([t.pp for t in self.triplets])

    @property
    def has_pn(self):
        return np.array([t.pn is not None for t in self.triplets], dtype=bool)

    @property
    def y_blackbox(self):
        return np.array([t.y_blackbox for t in self.triplets], dtype=int)

    def PN(self, fill=None):
        """PN matrix; rows without a PN are filled with ``fill`` (default: the sample)."""
        rows = []
        for t in self.triplets:
            if t.pn is not None:
                rows.append(t.pn)
            else:
                rows.append(t.x if fill is None else np.full_like(t.x, fill))
        return np.array(rows)

    def summary(self) -> dict:
        n = len(self.triplets)
        pns = [t.pn_sparsity for t in self.triplets if t.pn is not None]
        return {
            "n_samples": n,
            "pn_coverage": (len(pns) / n) if n else 0.0,
            "mean_pp_sparsity": float(np.mean([t.pp_sparsity for t in self.triplets])) if n else 0.0,
            "mean_pn_sparsity": float(np.mean(pns)) if pns else None,
            "n_pp_fallback": sum(t.pp_fallback for t in self.triplets),
            "n_errors": len(self.errors),
        }


# ----------------------------------------------------------------------------
# optimiser

def _margins(P, y, kind, kappa):
    """Hinge margin of each row and whether the row is a valid PP/PN."""
    rows = np.arange(P.shape[0])
    true = P[rows, y]
    Q = P.copy()
    Q[rows, y] = -np.inf
    other = Q.max(axis=1)
    pred = np.argmax(P, axis=1)
    if kind == PP:
        raw, valid = other - true, pred == y
    else:
        raw, valid = true - other, pred != y
    return np.maximum(raw, -kappa), valid, pred


class _Problem:
    """Batch of box-constrained elastic-net margin problems in normalised units."""

    def __init__(self, model, y, anchor, lo, hi, lower, span, kind, cfg, weight):
        self.model = model
        self.y = y
        self.kind = kind
        self.cfg = cfg
        self.weight = weight
        self.lower = lower
        self.span = span
        self.a = (anchor - lower) / span
        self.lo = (lo - lower) / span
        self.hi = (hi - lower) / span

    def query(self, U, rows):
        V = self.lower + U * self.span
        if self.cfg.margin_space == "log":
            P = self.model.log_confidence(V)
            P = np.maximum(P, -1e300)  # a zero probability from an external model
        else:
            P = self.model.confidence(V)
        if not np.all(np.isfinite(P)):
            raise ExplainerError("black-box returned non-finite confidences")
        return _margins(P, self.y[rows], self.kind, self.cfg.kappa)

    def penalty(self, U, rows):
        D = U - self.a[rows]
        return self.cfg.l1_strength * np.abs(D).sum(axis=1) + self.cfg.l2_strength * (D * D).sum(axis=1)

    def objective(self, U, rows):
        m, valid, pred = self.query(U, rows)
        return self.weight * m + self.penalty(U, rows), valid, m, pred

    def margin_gradient(self, U, rows):
        m, d = U.shape
        h = self.cfg.fd_step
        E = np.eye(d) * h
        plus = (U[:, None, :] + E[None]).reshape(-1, d)
        minus = (U[:, None, :] - E[None]).reshape(-1, d)
        rr = np.repeat(rows, d)
        mp, _, _ = self.query(plus, rr)
        mm, _, _ = self.query(minus, rr)
        return ((mp - mm) / (2 * h)).reshape(m, d)

    def prox(self, Z, rows, t):
        D = Z - self.a[rows]
        D = np.sign(D) * np.maximum(np.abs(D) - t[:, None] * self.cfg.l1_strength, 0.0)
        return np.clip(self.a[rows] + D, self.lo[rows], self.hi[rows])


def _solve(problem: _Problem, U0: np.ndarray, history: list | None = None):
    """Run the projected proximal-gradient loop on every row of ``U0``.

    Returns the best valid iterate per row (NaN rows where none was found),
    its objective, and per-row iteration counts.
    """
    cfg = problem.cfg
    n, d = U0.shape
    U = np.clip(U0, problem.lo, problem.hi)
    all_rows = np.arange(n)
    F, valid, _, _ = problem.objective(U, all_rows)
    best = np.full((n, d), np.nan)
    best_F = np.full(n, np.inf)
    best[valid] = U[valid]
    best_F[valid] = F[valid]
    iters = np.zeros(n, dtype=int)
    active = np.ones(n, dtype=bool)
    for it in range(1, cfg.max_iters + 1):
        rows = np.flatnonzero(active)
        if rows.size == 0:
            break
        iters[rows] = it
        Ur = U[rows]
        Gm = problem.weight * problem.margin_gradient(Ur, rows)
        G = Gm + 2 * cfg.l2_strength * (Ur - problem.a[rows])
        pending = _line_search(problem, U, F, best, best_F, active, rows, Ur, G, it)
        if pending.size:
            # Stuck, typically on the hinge kink: retry moving only the
            # coordinates the margin does not react to.
            keep = np.abs(Gm[pending]) <= 1e-8
            has = keep.any(axis=1)
            retry, keep = pending[has], keep[has]
            if retry.size:
                r = rows[retry]
                lo, hi = problem.lo[r].copy(), problem.hi[r].copy()
                problem.lo[r] = np.where(keep, lo, Ur[retry])
                problem.hi[r] = np.where(keep, hi, Ur[retry])
                left = _line_search(problem, U, F, best, best_F, active, r, Ur[retry],
                                    np.where(keep, G[retry], 0.0), it)
                problem.lo[r], problem.hi[r] = lo, hi
                pending = np.union1d(pending[~has], retry[left])
            # no descent along the estimated direction at any tried step
            active[rows[pending]] = False
        if history is not None:
            history.append(float(best_F[0]))
    return best, best_F, iters


def _line_search(problem, U, F, best, best_F, active, rows, Ur, G, it):
    """Backtracking proximal step for ``rows``; returns local indices that never descended."""
    cfg = problem.cfg
    t = np.full(rows.size, cfg.step_size / np.sqrt(it))
    pending = np.arange(rows.size)
    for _ in range(cfg.max_backtracks + 1):
        if pending.size == 0:
            break
        pr = rows[pending]
        trial = problem.prox(Ur[pending] - t[pending, None] * G[pending], pr, t[pending])
        Ft, vt, _, _ = problem.objective(trial, pr)
        ok = Ft <= F[pr]
        acc = pr[ok]
        if acc.size:
            moved = np.max(np.abs(trial[ok] - U[acc]), axis=1)
            U[acc] = trial[ok]
            F[acc] = Ft[ok]
            active[acc[moved < 1e-12]] = False
        improve = ok & vt & (Ft < best_F[pr])
        best[pr[improve]] = trial[improve]
        best_F[pr[improve]] = Ft[improve]
        t[pending[~ok]] *= 0.5
        pending = pending[~ok]
    return pending


def _snap(problem: _Problem, U: np.ndarray, rows: np.ndarray, eps: float) -> np.ndarray:
    """Snap near-anchor coordinates onto the anchor, undoing snaps that break validity."""
    if eps <= 0 or U.size == 0:
        return U
    A = problem.a[rows]
    dev = np.abs(U - A)
    close = (dev < eps) & (dev > 0)
    if not close.any():
        return U
    S = np.where(close, A, U)
    _, valid, _ = problem.query(S, rows)
    out = S.copy()
    for i in np.flatnonzero(~valid):
        order = np.argsort(-dev[i] * close[i], kind="stable")[: int(close[i].sum())]
        cand = np.repeat(S[i:i + 1], order.size + 1, axis=0)
        for k in range(1, order.size + 1):
            cand[k:, order[k - 1]] = U[i, order[k - 1]]
        _, v, _ = problem.query(cand, np.full(cand.shape[0], rows[i]))
        out[i] = cand[np.argmax(v)] if v.any() else U[i]
    return out


def _norm_inputs(bounds: FeatureBounds):
    span = bounds.span
    return bounds.lower, np.where(span > 0, span, 1.0)


def _pp_batch(model, X, y, b, bounds, cfg, history=None):
    lower, span = _norm_inputs(bounds)
    Bm = np.broadcast_to(b, X.shape)
    lo, hi = np.minimum(Bm, X), np.maximum(Bm, X)
    prob = _Problem(model, y, Bm, lo, hi, lower, span, PP, cfg, cfg.margin_weights[0])
    U0 = (X - lower) / span
    best, best_F, iters = _solve(prob, U0, history)
    rows = np.arange(X.shape[0])
    found = np.all(np.isfinite(best), axis=1)
    # the start point is always valid for a PP, so this only trips on model noise
    best[~found] = U0[~found]
    best = _snap(prob, best, rows, cfg.snap_epsilon)
    P = _to_raw(best, prob, X, Bm, lo, hi)
    fallback = np.all(P == X, axis=1) & np.any(X != Bm, axis=1)
    return P, iters, best_F, fallback


def _to_raw(U, prob, X, anchor, lo, hi):
    """Map normalised iterates back to feature units, exactly hitting anchor/start values."""
    V = np.clip(prob.lower + U * prob.span, lo, hi)
    U0 = (X - prob.lower) / prob.span
    V = np.where(U == prob.a, anchor, V)
    return np.where(U == U0, X, V)


def _pn_batch(model, X, y, b, bounds, cfg, history=None):
    lower, span = _norm_inputs(bounds)
    Bm = np.broadcast_to(b, X.shape)
    up = X > Bm
    down = X < Bm
    lo = np.where(up, X, np.where(down, np.minimum(bounds.lower, X), X))
    hi = np.where(up, np.maximum(bounds.upper, X), np.where(down, X, X))
    U0 = (X - lower) / span
    n = X.shape[0]
    out = np.full(X.shape, np.nan)
    iters = np.zeros(n, dtype=int)
    weight_used = np.full(n, np.nan)
    todo = np.arange(n)
    for c in cfg.margin_weights:
        if todo.size == 0:
            break
        prob = _Problem(model, y[todo], X[todo], lo[todo], hi[todo], lower, span, PN, cfg, c)
        best, _, it = _solve(prob, U0[todo], history if c == cfg.margin_weights[0] else None)
        iters[todo] += it
        found = np.all(np.isfinite(best), axis=1)
        if found.any():
            sub = np.flatnonzero(found)
            snapped = _snap(prob, best[sub], sub, cfg.snap_epsilon)
            t = todo[sub]
            out[t] = _to_raw(snapped, _Problem(model, y[t], X[t], lo[t], hi[t], lower, span, PN, cfg, c),
                             X[t], X[t], lo[t], hi[t])
            weight_used[todo[sub]] = c
        todo = todo[~found]
    return out, iters, weight_used


def _check(model, x, bounds):
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != model.n_features or bounds.lower.shape[0] != model.n_features:
        raise ExplainerError(f"dimension mismatch: model has {model.n_features} features, "
                             f"input has {x.shape[-1]}, bounds have {bounds.lower.shape[0]}")
    return x


def _base(b):
    return b.values if isinstance(b, BaseValues) else np.asarray(b, dtype=float)


def find_pp(model: BlackBoxModel, x, b, bounds: FeatureBounds, cfg: ExplainerConfig | None = None,
            history: list | None = None) -> np.ndarray:
    """Pertinent positive of ``x``: a point between the base values and ``x`` that keeps its class.

    Falls back to ``x`` itself when the search cannot move.
    If ``history`` is a list it receives the best-so-far objective per iteration.
    """
    cfg = cfg or ExplainerConfig()
    x = _check(model, x, bounds)
    y = np.array([model.predict(x)])
    P, *_ = _pp_batch(model, x[None], y, _base(b), bounds, cfg, history)
    return P[0]


def find_pn(model: BlackBoxModel, x, b, bounds: FeatureBounds, cfg: ExplainerConfig | None = None,
            history: list | None = None) -> np.ndarray | None:
    """Pertinent negative of ``x``, or ``None`` if no label-flipping point was found."""
    cfg = cfg or ExplainerConfig()
    x = _check(model, x, bounds)
    y = np.array([model.predict(x)])
    N, *_ = _pn_batch(model, x[None], y, _base(b), bounds, cfg, history)
    return None if np.isnan(N[0]).any() else N[0]


def _explain_rows(model, X, b, bounds, cfg, offset):
    y = model.predict(X)
    P, pp_iters, pp_obj, fallback = _pp_batch(model, X, y, b, bounds, cfg)
    N, pn_iters, weight = _pn_batch(model, X, y, b, bounds, cfg)
    has = ~np.isnan(N).any(axis=1)
    y_p = model.predict(P)
    y_n = np.full(X.shape[0], -1)
    if has.any():
        y_n[has] = model.predict(N[has])
    out = []
    for i in range(X.shape[0]):
        if y_p[i] != y[i]:
            raise ExplainerError(f"sample {offset + i}: PP changed the black-box class")
        if has[i] and y_n[i] == y[i]:
            raise ExplainerError(f"sample {offset + i}: PN does not flip the black-box class")
        out.append(ExplanationTriplet(
            sample_index=offset + i,
            x=X[i].copy(),
            y_blackbox=int(y[i]),
            pp=P[i],
            pn=N[i] if has[i] else None,
            y_pn=int(y_n[i]) if has[i] else None,
            pp_sparsity=int(np.count_nonzero(P[i] != b)),
            pn_sparsity=int(np.count_nonzero(N[i] != X[i])) if has[i] else None,
            diagnostics={
                "pp_iterations": int(pp_iters[i]),
                "pn_iterations": int(pn_iters[i]),
                "pp_objective": float(pp_obj[i]),
                "pp_fallback": bool(fallback[i]),
                "pn_margin_weight": None if np.isnan(weight[i]) else float(weight[i]),
            },
        ))
    return out


def explain_dataset(model: BlackBoxModel, data: Dataset | np.ndarray, b, bounds: FeatureBounds,
                    cfg: ExplainerConfig | None = None) -> ExplanationSet:
    """One :class:`ExplanationTriplet` per row of ``data``, in row order.

    A batch that raises is retried sample by sample; samples that still
    fail are recorded in ``errors`` and get a fallback triplet (PP = x, no PN).
    """
    cfg = cfg or ExplainerConfig()
    X = data.features if isinstance(data, Dataset) else np.asarray(data, dtype=float)
    _check(model, X, bounds)
    b = _base(b)
    triplets: list[ExplanationTriplet] = []
    errors: dict[int, str] = {}
    for start in range(0, X.shape[0], cfg.batch_size):
        chunk = X[start:start + cfg.batch_size]
        try:
            triplets += _explain_rows(model, chunk, b, bounds, cfg, start)
            continue
        except GBFLError as exc:
            log.warning("batch at %d failed (%s); retrying per sample", start, exc)
        for i in range(chunk.shape[0]):
            try:
                triplets += _explain_rows(model, chunk[i:i + 1], b, bounds, cfg, start + i)
            except GBFLError as exc:
                errors[start + i] = str(exc)
                try:
                    yb = int(model.predict(chunk[i]))
                except GBFLError:
                    yb = -1
                triplets.append(ExplanationTriplet(
                    start + i, chunk[i].copy(), yb, chunk[i].copy(),
                    pp_sparsity=int(np.count_nonzero(chunk[i] != b)),
                    diagnostics={"pp_fallback": True, "error": str(exc)}))
    return ExplanationSet(triplets, b, errors)


# ----------------------------------------------------------------------------
# persistence

def save_explanations(expl: ExplanationSet, path, feature_names: Sequence[str]) -> None:
    """CSV rows ``sample_index,kind,<features>`` plus a JSON sidecar with diagnostics."""
    path = Path(path)
    lines = [",".join(["sample_index", "kind", *feature_names])]
    for t in expl:
        lines.append(",".join([str(t.sample_index), PP, *(format(v, ".17g") for v in t.pp)]))
        if t.pn is not None:
            lines.append(",".join([str(t.sample_index), PN, *(format(v, ".17g") for v in t.pn)]))
    path.write_text("\n".join(lines) + "\n")
    side = {
        "base": [float(v) for v in expl.base],
        "summary": expl.summary(),
        "errors": {str(k): v for k, v in expl.errors.items()},
        "samples": [
            {"sample_index": t.sample_index, "y_blackbox": t.y_blackbox, "y_pn": t.y_pn,
             "x": [float(v) for v in t.x], "pp_sparsity": t.pp_sparsity,
             "pn_sparsity": t.pn_sparsity, **t.diagnostics}
            for t in expl
        ],
    }
    path.with_suffix(".json").write_text(json.dumps(side, indent=1))


def load_explanations(path) -> ExplanationSet:
    path = Path(path)
    side = json.loads(path.with_suffix(".json").read_text())
    rows = path.read_text().splitlines()[1:]
    pp, pn = {}, {}
    for ln in rows:
        if not ln.strip():
            continue
        parts = ln.split(",")
        vec = np.array([float(v) for v in parts[2:]])
        (pp if parts[1] == PP else pn)[int(parts[0])] = vec
    base = np.array(side["base"])
    triplets = []
    for s in side["samples"]:
        i = s["sample_index"]
        diag = {k: v for k, v in s.items()
                if k not in ("sample_index", "y_blackbox", "y_pn", "x", "pp_sparsity", "pn_sparsity")}
        triplets.append(ExplanationTriplet(i, np.array(s["x"]), s["y_blackbox"], pp[i], pn.get(i),
                                           s["y_pn"], s["pp_sparsity"], s["pn_sparsity"], diag))
    return ExplanationSet(triplets, base, {int(k): v for k, v in side["errors"].items()})
