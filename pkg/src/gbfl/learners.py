"""Transparent learners: height-capped CART and L1-penalised multinomial logistic regression."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .clauses import BooleanDataset, Clause, ClauseEvaluator
from .errors import GBFLError, ModelError


# ----------------------------------------------------------------------------
# CART

@dataclass
class Node:
    counts: np.ndarray
    depth: int
    feature: int = -1
    threshold: float = np.nan
    gain: float = 0.0
    left: "Node | None" = None
    right: "Node | None" = None

    @property
    def is_leaf(self) -> bool:
        return self.left is None

    @property
    def n(self) -> int:
        return int(self.counts.sum())

    @property
    def prediction(self) -> int:
        return int(np.argmax(self.counts))


def _gini(counts: np.ndarray) -> np.ndarray:
    n = counts.sum(axis=-1)
    with np.errstate(invalid="ignore", divide="ignore"):
        p = counts / n[..., None]
    return np.where(n > 0, 1.0 - np.sum(p * p, axis=-1), 0.0)


def _best_split(X, Y, binary, min_leaf):
    """Best (gain, feature, threshold) at a node; ties go to the lowest feature, then threshold."""
    n = X.shape[0]
    total = Y.sum(axis=0)
    parent = _gini(total)
    if binary:
        right = X.T @ Y                                   # (F, K) counts where column == 1
        left = total - right
        nl, nr = left.sum(axis=1), right.sum(axis=1)
        gain = parent - (nl * _gini(left) + nr * _gini(right)) / n
        gain[(nl < min_leaf) | (nr < min_leaf)] = -np.inf
        f = int(np.argmax(gain))
        return gain[f], f, 0.5
    best = (-np.inf, -1, np.nan)
    for f in range(X.shape[1]):
        order = np.argsort(X[:, f], kind="stable")
        xs = X[order, f]
        cum = np.cumsum(Y[order], axis=0)[:-1]           # left counts after i+1 rows
        cut = np.flatnonzero(xs[1:] > xs[:-1])
        if cut.size == 0:
            continue
        left = cum[cut]
        right = total - left
        nl = cut + 1
        nr = n - nl
        gain = parent - (nl * _gini(left) + nr * _gini(right)) / n
        gain[(nl < min_leaf) | (nr < min_leaf)] = -np.inf
        i = int(np.argmax(gain))
        if gain[i] > best[0]:
            best = (gain[i], f, 0.5 * (xs[cut[i]] + xs[cut[i] + 1]))
    return best


class DecisionTree:
    """Binary CART tree; a sample goes left when ``x[feature] <= threshold``."""

    def __init__(self, root: Node, n_features: int, n_classes: int, max_height: int,
                 min_leaf: int = 1, seed: int = 0):
        self.root = root
        self.n_features = n_features
        self.n_classes = n_classes
        self.max_height = max_height
        self.min_leaf = min_leaf
        self.seed = seed

    @property
    def height(self) -> int:
        def h(node):
            return 0 if node.is_leaf else 1 + max(h(node.left), h(node.right))
        return h(self.root)

    def nodes(self):
        stack = [self.root]
        while stack:
            node = stack.pop()
            yield node
            if not node.is_leaf:
                stack += [node.right, node.left]

    def predict(self, X, max_depth: int | None = None) -> np.ndarray:
        """Predictions, optionally as if the tree had been grown only to ``max_depth``."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.n_features:
            raise ModelError(f"expected {self.n_features} columns, got {X.shape[1]}")
        out = np.empty(X.shape[0], dtype=int)
        limit = np.inf if max_depth is None else max_depth

        def walk(node, idx):
            if node.is_leaf or node.depth >= limit:
                out[idx] = node.prediction
                return
            go_left = X[idx, node.feature] <= node.threshold
            walk(node.left, idx[go_left])
            walk(node.right, idx[~go_left])

        walk(self.root, np.arange(X.shape[0]))
        return out

    def truncated(self, height: int) -> "DecisionTree":
        def cut(node):
            if node.is_leaf or node.depth >= height:
                return Node(node.counts, node.depth)
            return Node(node.counts, node.depth, node.feature, node.threshold, node.gain,
                        cut(node.left), cut(node.right))
        return DecisionTree(cut(self.root), self.n_features, self.n_classes, min(height, self.max_height),
                            self.min_leaf, self.seed)

    def feature_importances(self) -> np.ndarray:
        """Total impurity decrease per column, weighted by the node's share of samples."""
        imp = np.zeros(self.n_features)
        total = self.root.n
        for node in self.nodes():
            if not node.is_leaf:
                imp[node.feature] += node.n / total * node.gain
        return imp

    def used_features(self) -> np.ndarray:
        """Boolean mask of the columns some internal node splits on (even at zero gain)."""
        used = np.zeros(self.n_features, dtype=bool)
        for node in self.nodes():
            if not node.is_leaf:
                used[node.feature] = True
        return used

    def to_dict(self) -> dict:
        def enc(node):
            d = {"counts": node.counts.astype(int).tolist(), "depth": node.depth}
            if not node.is_leaf:
                d.update(feature=node.feature, threshold=node.threshold, gain=node.gain,
                         left=enc(node.left), right=enc(node.right))
            return d
        return {"type": "tree", "n_features": self.n_features, "n_classes": self.n_classes,
                "max_height": self.max_height, "min_leaf": self.min_leaf, "seed": self.seed,
                "root": enc(self.root)}

    @classmethod
    def from_dict(cls, d: dict) -> "DecisionTree":
        def dec(x):
            node = Node(np.array(x["counts"], dtype=float), x["depth"])
            if "feature" in x:
                node.feature, node.threshold, node.gain = x["feature"], x["threshold"], x["gain"]
                node.left, node.right = dec(x["left"]), dec(x["right"])
            return node
        return cls(dec(d["root"]), d["n_features"], d["n_classes"], d["max_height"], d["min_leaf"],
                   d["seed"])

    def render(self, names: Sequence[str] | None = None, class_names=None) -> str:
        names = names or [f"f{i}" for i in range(self.n_features)]
        class_names = class_names or [str(k) for k in range(self.n_classes)]
        lines = []

        def emit(node, indent):
            pad = "    " * indent
            if node.is_leaf:
                lines.append(f"{pad}return {class_names[node.prediction]}  # counts {node.counts.astype(int).tolist()}")
                return
            lines.append(f"{pad}if {names[node.feature]} <= {node.threshold:g}:")
            emit(node.left, indent + 1)
            lines.append(f"{pad}else:")
            emit(node.right, indent + 1)

        emit(self.root, 0)
        return "\n".join(lines)


def _xy(X, y):
    if isinstance(X, BooleanDataset):
        return X.matrix.astype(float), (X.targets if y is None else np.asarray(y))
    return np.asarray(X, dtype=float), np.asarray(y)


def fit_tree(X, y=None, max_height: int = 5, min_leaf: int = 1, seed: int = 0,
             n_classes: int | None = None) -> DecisionTree:
    """Greedy CART with Gini impurity.

    Splits stop on a pure node, the height cap, ``min_leaf`` or when no
    column separates the node. A split with zero gain is still taken, as
    in the usual CART implementations, so XOR-like labels can be learned. Columns holding only 0/1 are split as membership tests. ``seed``
    is recorded only: the procedure is deterministic.
    """
    X, y = _xy(X, y)
    if X.ndim != 2 or X.shape[0] == 0:
        raise ModelError("cannot fit a tree on an empty dataset")
    if max_height < 0:
        raise ModelError("max_height must be >= 0")
    if min_leaf < 1:
        raise ModelError("min_leaf must be >= 1")
    y = y.astype(int)
    K = int(n_classes if n_classes is not None else y.max() + 1)
    Y = np.eye(K)[y]
    binary = bool(np.all((X == 0) | (X == 1)))

    def grow(idx, depth):
        counts = Y[idx].sum(axis=0)
        node = Node(counts, depth)
        if depth >= max_height or np.count_nonzero(counts) <= 1 or idx.size < 2 * min_leaf:
            return node
        gain, f, thr = _best_split(X[idx], Y[idx], binary, min_leaf)
        if not gain > -1e-12:               # zero-gain splits are allowed (XOR needs them)
            return node
        go_left = X[idx, f] <= thr
        node.feature, node.threshold, node.gain = int(f), float(thr), max(float(gain), 0.0)
        node.left = grow(idx[go_left], depth + 1)
        node.right = grow(idx[~go_left], depth + 1)
        return node

    return DecisionTree(grow(np.arange(X.shape[0]), 0), X.shape[1], K, max_height, min_leaf, seed)


# ----------------------------------------------------------------------------
# L1 logistic regression

@dataclass
class LogisticModel:
    weights: np.ndarray      # (K, F)
    intercepts: np.ndarray   # (K,)
    l1: float
    loss_history: list = field(default_factory=list)

    @property
    def n_features(self):
        return self.weights.shape[1]

    def scores(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.n_features:
            raise ModelError(f"expected {self.n_features} columns, got {X.shape[1]}")
        return X @ self.weights.T + self.intercepts

    def predict(self, X) -> np.ndarray:
        return np.argmax(self.scores(X), axis=1)

    def feature_importances(self) -> np.ndarray:
        return np.abs(self.weights).max(axis=0)

    def to_dict(self) -> dict:
        return {"type": "logistic", "weights": self.weights.tolist(),
                "intercepts": self.intercepts.tolist(), "l1": self.l1}

    @classmethod
    def from_dict(cls, d):
        return cls(np.array(d["weights"], dtype=float), np.array(d["intercepts"], dtype=float), d["l1"])


def _logistic_objective(W, c, X, Y, l1):
    Z = X @ W.T + c
    Z = Z - Z.max(axis=1, keepdims=True)
    logp = Z - np.log(np.exp(Z).sum(axis=1, keepdims=True))
    return -np.mean(np.sum(Y * logp, axis=1)) + l1 * np.abs(W).sum(), np.exp(logp)


def fit_logistic_l1(X, y=None, l1: float = 0.01, epochs: int = 500, lr: float = 1.0, seed: int = 0,
                    n_classes: int | None = None) -> LogisticModel:
    """Multinomial logistic regression by proximal gradient with backtracking.

    Minimises mean cross-entropy plus ``l1 * |W|_1`` (intercepts unpenalised);
    each epoch is one full-batch step, so the objective never increases.
    """
    X, y = _xy(X, y)
    if X.ndim != 2 or X.shape[0] == 0:
        raise ModelError("cannot fit on an empty dataset")
    if l1 < 0:
        raise ModelError("l1 must be >= 0")
    y = y.astype(int)
    K = int(n_classes if n_classes is not None else y.max() + 1)
    Y = np.eye(K)[y]
    n, F = X.shape
    W = np.zeros((K, F))
    c = np.zeros(K)
    obj, P = _logistic_objective(W, c, X, Y, l1)
    history = [obj]
    step = lr
    for _ in range(epochs):
        R = (P - Y) / n
        gW, gc = R.T @ X, R.sum(axis=0)
        for _ in range(60):
            Wn = W - step * gW
            Wn = np.sign(Wn) * np.maximum(np.abs(Wn) - step * l1, 0.0)
            cn = c - step * gc
            new, Pn = _logistic_objective(Wn, cn, X, Y, l1)
            if not np.isfinite(new):
                raise ModelError("logistic fit diverged (non-finite objective)")
            if new <= obj:
                break
            step *= 0.5
        else:
            break
        if obj - new < 1e-12:
            W, c, obj, P = Wn, cn, new, Pn
            history.append(obj)
            break
        W, c, obj, P = Wn, cn, new, Pn
        history.append(obj)
        step = min(step * 2.0, lr)
    return LogisticModel(W, c, l1, history)


# ----------------------------------------------------------------------------

def predict(model, X) -> np.ndarray:
    if isinstance(X, BooleanDataset):
        X = X.matrix
    return model.predict(X)


def top_k_features(model, k: int) -> list[tuple[int, float]]:
    """``(column, importance)`` pairs of the used columns, most important first."""
    imp = model.feature_importances()
    used = np.flatnonzero(model.used_features() if hasattr(model, "used_features") else imp > 0)
    order = sorted(used, key=lambda i: (-imp[i], i))
    return [(int(i), float(imp[i])) for i in order[:k]]


@dataclass
class TransparentModel:
    """A fitted learner plus the input representation it expects.

    ``clauses`` is set for models trained on clause features; predictions on
    raw points then go through clause evaluation first.
    """

    method: str
    model: DecisionTree | LogisticModel
    clauses: list[Clause] | None = None
    n_features: int | None = None
    hyperparameters: dict = field(default_factory=dict)

    def __post_init__(self):
        self._evaluator = (ClauseEvaluator(self.clauses, self.n_features)
                           if self.clauses is not None else None)

    def featurize(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return X if self._evaluator is None else self._evaluator(X)

    def predict_points(self, X) -> np.ndarray:
        return self.model.predict(self.featurize(X))

    def top_k(self, k: int):
        ranked = top_k_features(self.model, k)
        if self.clauses is None:
            return ranked
        return [(self.clauses[i], v) for i, v in ranked]

    def to_dict(self, feature_names=None) -> dict:
        return {"method": self.method, "model": self.model.to_dict(),
                "hyperparameters": self.hyperparameters, "n_features": self.n_features,
                "clauses": None if self.clauses is None
                else [c.to_dict(feature_names) for c in self.clauses]}

    @classmethod
    def from_dict(cls, d: dict) -> "TransparentModel":
        m = d["model"]
        model = DecisionTree.from_dict(m) if m["type"] == "tree" else LogisticModel.from_dict(m)
        clauses = None if d["clauses"] is None else [Clause.from_dict(c) for c in d["clauses"]]
        return cls(d["method"], model, clauses, d["n_features"], d.get("hyperparameters", {}))

    def save(self, path, feature_names=None):
        with open(path, "w") as fh:
            json.dump(self.to_dict(feature_names), fh, indent=1)

    @classmethod
    def load(cls, path) -> "TransparentModel":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))
