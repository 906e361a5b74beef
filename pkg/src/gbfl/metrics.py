"""Local consistency of a transparent model with a black-box, and accuracy."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .errors import GBFLError


@dataclass
class ConsistencyReport:
    c_tb: float
    c_tb_pp: float
    c_tb_pn: float | None
    n_samples: int
    n_with_pn: int
    accuracy_true_labels: float | None = None
    per_sample_loss: list[int] | None = field(default=None, repr=False)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ConsistencyReport":
        return cls(**d)


def lambda_tb(pred_b_x: int, pred_t_x: int, pred_t_pp: int, pred_t_pn: int | None) -> int:
    """Per-sample loss: 0 iff the transparent model agrees on x and the PP and disagrees on the PN.

    A missing PN (``None``) skips the PN condition.
    """
    ok = pred_b_x == pred_t_x and pred_b_x == pred_t_pp
    if pred_t_pn is not None:
        ok = ok and pred_b_x != pred_t_pn
    return 0 if ok else 1


def consistency(pred_b_x, pred_t_x, pred_t_pp, pred_t_pn, has_pn=None, true_labels=None,
                keep_losses: bool = False) -> ConsistencyReport:
    """Consistency metrics over an evaluation set.

    Parameters
    ----------
    pred_b_x : black-box predictions on the samples.
    pred_t_x, pred_t_pp : transparent-model predictions on the samples and their PPs.
    pred_t_pn : transparent-model predictions on the PNs; either a sequence with
        ``None`` where a sample has no PN, or an int array paired with ``has_pn``.
    true_labels : optional, for the accuracy field.
    """
    b = np.asarray(pred_b_x, dtype=int)
    t = np.asarray(pred_t_x, dtype=int)
    tp = np.asarray(pred_t_pp, dtype=int)
    if has_pn is None:
        has_pn = np.array([v is not None for v in pred_t_pn], dtype=bool)
        tn = np.array([-1 if v is None else v for v in pred_t_pn], dtype=int)
    else:
        has_pn = np.asarray(has_pn, dtype=bool)
        tn = np.asarray(pred_t_pn, dtype=int)
    n = b.size
    if not (t.size == tp.size == tn.size == has_pn.size == n):
        raise GBFLError("prediction arrays are not aligned")
    if n == 0:
        raise GBFLError("empty evaluation set")
    pp_ok = tp == b
    pn_ok = tn != b
    ok = (t == b) & pp_ok & (pn_ok | ~has_pn)
    n_pn = int(has_pn.sum())
    acc = None
    if true_labels is not None:
        acc = accuracy(t, true_labels)
    return ConsistencyReport(
        c_tb=float(ok.mean()),
        c_tb_pp=float(pp_ok.mean()),
        c_tb_pn=float(pn_ok[has_pn].mean()) if n_pn else None,
        n_samples=n,
        n_with_pn=n_pn,
        accuracy_true_labels=acc,
        per_sample_loss=(~ok).astype(int).tolist() if keep_losses else None,
    )


def accuracy(predictions: Sequence[int], true_labels: Sequence[int]) -> float:
    p = np.asarray(predictions)
    y = np.asarray(true_labels)
    if p.size == 0:
        raise GBFLError("accuracy of an empty set is undefined")
    if p.shape != y.shape:
        raise GBFLError("predictions and labels are not aligned")
    return float(np.mean(p == y))


def evaluate_transparent(model, explanations, true_labels=None, keep_losses=False) -> ConsistencyReport:
    """Consistency of a :class:`~gbfl.learners.TransparentModel` on an explanation set."""
    X = explanations.X
    has = explanations.has_pn
    pred_x = model.predict_points(X)
    pred_p = model.predict_points(explanations.PP)
    pred_n = np.full(len(explanations), -1)
    if has.any():
        pred_n[has] = model.predict_points(explanations.PN()[has])
    return consistency(explanations.y_blackbox, pred_x, pred_p, pred_n, has, true_labels,
                       keep_losses)
