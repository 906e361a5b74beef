"""Black-box classifiers seen only through their confidence scores.

Built-in reference models (multinomial logistic and a ReLU MLP trained with
mini-batch SGD) plus an adapter that talks to an external process over a
line-oriented CSV protocol on stdin/stdout.
"""

from __future__ import annotations

import hashlib
import json
import shlex
import struct
import subprocess
import sys
import threading
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .data import Dataset
from .errors import ModelError

MAGIC = b"GBFLBB1"
FORMAT_VERSION = 1


def softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


class BlackBoxModel:
    """Opaque classifier exposing class-probability vectors.

    Subclasses implement :meth:`_confidence` on a 2-D batch.
    """

    kind = "abstract"

    def __init__(self, n_features: int, n_classes: int, metadata: dict | None = None):
        self.n_features = int(n_features)
        self.n_classes = int(n_classes)
        self.metadata = dict(metadata or {})

    def confidence(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        single = X.ndim == 1
        X2 = X[None, :] if single else X
        if X2.ndim != 2 or X2.shape[1] != self.n_features:
            raise ModelError(f"expected inputs with {self.n_features} features, got shape {X.shape}")
        if X2.shape[0] == 0:
            return np.empty((0, self.n_classes))
        P = self._confidence(X2)
        return P[0] if single else P

    def log_confidence(self, X) -> np.ndarray:
        """Log class probabilities; models with logits compute these without underflow."""
        X = np.asarray(X, dtype=float)
        Z = getattr(self, "_logits", None)
        if Z is None or X.ndim != 2 or X.shape[1] != self.n_features or X.shape[0] == 0:
            with np.errstate(divide="ignore"):
                return np.log(self.confidence(X))
        Z = Z(X)
        Z = Z - Z.max(axis=-1, keepdims=True)
        return Z - np.log(np.exp(Z).sum(axis=-1, keepdims=True))

    def predict(self, X) -> np.ndarray | int:
        P = self.confidence(X)
        out = np.argmax(P, axis=-1)
        return int(out) if np.ndim(out) == 0 else out

    def _confidence(self, X: np.ndarray) -> np.ndarray:
        raise NotImplementedError


class _Standardizer:
    def __init__(self, mean, scale):
        self.mean = np.asarray(mean, dtype=float)
        self.scale = np.asarray(scale, dtype=float)

    @classmethod
    def fit(cls, X, enabled=True):
        d = X.shape[1]
        if not enabled:
            return cls(np.zeros(d), np.ones(d))
        sd = X.std(axis=0)
        return cls(X.mean(axis=0), np.where(sd > 0, sd, 1.0))

    def __call__(self, X):
        return (X - self.mean) / self.scale


class LogisticBlackBox(BlackBoxModel):
    """Multinomial logistic model ``softmax(((x - mean) / scale) @ W + bias)``."""

    kind = "logistic"

    def __init__(self, weights, bias, mean=None, scale=None, metadata=None):
        W = np.asarray(weights, dtype=float)
        if W.ndim != 2:
            raise ModelError("logistic weights must be a (d, K) matrix")
        d, K = W.shape
        super().__init__(d, K, metadata)
        self.weights = W
        self.bias = np.asarray(bias, dtype=float).reshape(K)
        self.scaler = _Standardizer(np.zeros(d) if mean is None else mean,
                                    np.ones(d) if scale is None else scale)

    @classmethod
    def binary(cls, w, bias=0.0, **kw):
        """Two-class model whose class-1 probability is ``sigmoid(w @ x + bias)``."""
        w = np.atleast_1d(np.asarray(w, dtype=float))
        W = np.stack([np.zeros_like(w), w], axis=1)
        return cls(W, [0.0, float(bias)], **kw)

    def _logits(self, X):
        return self.scaler(X) @ self.weights + self.bias

    def _confidence(self, X):
        return softmax(self._logits(X))

    def parameters(self):
        return [self.weights, self.bias]


class MlpBlackBox(BlackBoxModel):
    """ReLU multilayer perceptron with a softmax output head."""

    kind = "mlp"

    def __init__(self, layers: Sequence[tuple[np.ndarray, np.ndarray]], mean=None, scale=None,
                 metadata=None):
        layers = [(np.asarray(W, dtype=float), np.asarray(b, dtype=float)) for W, b in layers]
        d, K = layers[0][0].shape[0], layers[-1][0].shape[1]
        super().__init__(d, K, metadata)
        self.layers = layers
        self.scaler = _Standardizer(np.zeros(d) if mean is None else mean,
                                    np.ones(d) if scale is None else scale)

    @property
    def widths(self) -> list[int]:
        return [W.shape[1] for W, _ in self.layers[:-1]]

    def _logits(self, X):
        h = self.scaler(X)
        for W, b in self.layers[:-1]:
            h = np.maximum(h @ W + b, 0.0)
        W, b = self.layers[-1]
        return h @ W + b

    def _confidence(self, X):
        return softmax(self._logits(X))

    def parameters(self):
        return [a for pair in self.layers for a in pair]


# ----------------------------------------------------------------------------
# training

@dataclass
class MlpConfig:
    hidden_layer_widths: list[int] = field(default_factory=lambda: [20, 10])
    activation: str = "relu"
    dropout_rates: list[float] | None = None
    epochs: int = 200
    batch_size: int = 32
    learning_rate: float = 0.05
    momentum: float = 0.9
    l2: float = 0.0
    seed: int = 0
    standardize_inputs: bool = True

    def __post_init__(self):
        if any(w < 1 for w in self.hidden_layer_widths):
            raise ModelError("hidden layer widths must be >= 1")
        if self.activation != "relu":
            raise ModelError(f"unsupported activation {self.activation!r}")
        if self.learning_rate < 0:
            raise ModelError("learning_rate must be >= 0")
        if self.dropout_rates is None:
            self.dropout_rates = [0.0] * len(self.hidden_layer_widths)
        if len(self.dropout_rates) != len(self.hidden_layer_widths):
            raise ModelError("need one dropout rate per hidden layer")
        if any(not 0.0 <= r < 1.0 for r in self.dropout_rates):
            raise ModelError("dropout rates must lie in [0, 1)")


@dataclass
class LogisticConfig:
    epochs: int = 200
    batch_size: int = 32
    learning_rate: float = 0.1
    momentum: float = 0.9
    l2: float = 0.0
    seed: int = 0
    standardize_inputs: bool = True

    hidden_layer_widths = ()
    dropout_rates = ()


def _glorot_normal(rng, fan_in, fan_out):
    return rng.normal(0.0, np.sqrt(2.0 / (fan_in + fan_out)), size=(fan_in, fan_out))


def init_reference_model(config, n_features: int, n_classes: int, seed: int | None = None,
                         scaler: _Standardizer | None = None) -> BlackBoxModel:
    """Seed-determined, untrained model with the shape described by ``config``."""
    rng = np.random.default_rng(config.seed if seed is None else seed)
    widths = [n_features, *config.hidden_layer_widths, n_classes]
    layers = [(_glorot_normal(rng, a, b), np.zeros(b)) for a, b in zip(widths[:-1], widths[1:])]
    mean = scaler.mean if scaler else None
    scale = scaler.scale if scaler else None
    if isinstance(config, LogisticConfig):
        W, b = layers[0]
        return LogisticBlackBox(W, b, mean, scale)
    return MlpBlackBox(layers, mean, scale)


def loss_and_grads(params: list[np.ndarray], X: np.ndarray, Y: np.ndarray,
                   l2: float = 0.0, dropout_masks=None):
    """Mean cross-entropy of a ReLU network and its gradients by backprop.

    ``params`` alternates weight matrices and bias vectors; ``Y`` is one-hot.
    A single (W, b) pair is multinomial logistic regression.
    """
    n = X.shape[0]
    acts = [X]
    h = X
    n_layers = len(params) // 2
    for i in range(n_layers - 1):
        h = np.maximum(h @ params[2 * i] + params[2 * i + 1], 0.0)
        if dropout_masks is not None:
            h = h * dropout_masks[i]
        acts.append(h)
    logits = h @ params[-2] + params[-1]
    P = softmax(logits)
    loss = -np.sum(Y * np.log(np.clip(P, 1e-300, None))) / n
    loss += 0.5 * l2 * sum(np.sum(params[2 * i] ** 2) for i in range(n_layers))
    grads = [None] * len(params)
    delta = (P - Y) / n
    for i in reversed(range(n_layers)):
        grads[2 * i] = acts[i].T @ delta + l2 * params[2 * i]
        grads[2 * i + 1] = delta.sum(axis=0)
        if i > 0:
            delta = delta @ params[2 * i].T
            delta = delta * (acts[i] > 0)
            if dropout_masks is not None:
                delta = delta * dropout_masks[i - 1]
    return loss, grads


def train_reference_model(config, train: Dataset, seed: int | None = None) -> BlackBoxModel:
    """Train a built-in black-box with mini-batch SGD (+ momentum) on cross-entropy.

    Inverted dropout is applied to hidden activations during training only.
    Raises :class:`ModelError` if the loss becomes non-finite.
    """
    seed = config.seed if seed is None else seed
    X = train.features
    K = train.n_classes
    scaler = _Standardizer.fit(X, config.standardize_inputs)
    model = init_reference_model(config, X.shape[1], K, seed, scaler)
    params = model.parameters()
    velocity = [np.zeros_like(p) for p in params]
    Xs = scaler(X)
    Y = np.eye(K)[train.labels]
    rng = np.random.default_rng(seed + 1)
    with np.errstate(over="ignore", invalid="ignore"):  # divergence is reported below
        _sgd(config, params, velocity, Xs, Y, rng)
    if not all(np.all(np.isfinite(p)) for p in params):
        raise ModelError(f"training diverged; try a smaller learning_rate than {config.learning_rate}")
    model.metadata = {"config": asdict(config), "seed": seed,
                      "config_hash": config_hash(config, seed)}
    return model


def _sgd(config, params, velocity, Xs, Y, rng):
    n = Xs.shape[0]
    bs = max(1, min(config.batch_size, n))
    rates = list(config.dropout_rates)
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        for start in range(0, n, bs):
            idx = order[start:start + bs]
            masks = None
            if any(rates):
                masks = [(rng.random((idx.size, w)) >= r) / (1.0 - r)
                         for w, r in zip(config.hidden_layer_widths, rates)]
            loss, grads = loss_and_grads(params, Xs[idx], Y[idx], config.l2, masks)
            if not np.isfinite(loss) or not all(np.all(np.isfinite(g)) for g in grads):
                raise ModelError(
                    f"training diverged at epoch {epoch} (non-finite loss); "
                    f"try a smaller learning_rate than {config.learning_rate}")
            for p, v, g in zip(params, velocity, grads):
                v *= config.momentum
                v -= config.learning_rate * g
                p += v


def config_hash(config, seed) -> str:
    payload = json.dumps({"type": type(config).__name__, "cfg": asdict(config), "seed": seed},
                         sort_keys=True, default=list)
    return hashlib.sha256(payload.encode()).hexdigest()[:16]


# ----------------------------------------------------------------------------
# persistence

def save_model(model: BlackBoxModel, path) -> None:
    """Write ``GBFLBB1`` + header length (uint32 LE) + JSON header + float64 LE blob."""
    if isinstance(model, LogisticBlackBox):
        arrays = [model.weights, model.bias]
        widths = []
    elif isinstance(model, MlpBlackBox):
        arrays = model.parameters()
        widths = model.widths
    else:
        raise ModelError(f"cannot serialize a {type(model).__name__}")
    arrays = arrays + [model.scaler.mean, model.scaler.scale]
    blob = b"".join(np.ascontiguousarray(a, dtype="<f8").tobytes() for a in arrays)
    header = {
        "version": FORMAT_VERSION,
        "kind": model.kind,
        "d": model.n_features,
        "K": model.n_classes,
        "widths": widths,
        "n_values": len(blob) // 8,
        "sha256": hashlib.sha256(blob).hexdigest(),
        "metadata": model.metadata,
    }
    hb = json.dumps(header, sort_keys=True, default=str).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC + struct.pack("<I", len(hb)) + hb + blob)


def load_model(path, expected_features: int | None = None) -> BlackBoxModel:
    with open(path, "rb") as fh:
        raw = fh.read()
    if not raw.startswith(MAGIC):
        raise ModelError(f"{path}: not a black-box model file (bad magic)")
    try:
        (hlen,) = struct.unpack_from("<I", raw, len(MAGIC))
        start = len(MAGIC) + 4
        header = json.loads(raw[start:start + hlen].decode())
    except (struct.error, ValueError, UnicodeDecodeError) as exc:
        raise ModelError(f"{path}: corrupt header ({exc})") from None
    if header.get("version") != FORMAT_VERSION:
        raise ModelError(f"{path}: format version {header.get('version')} != {FORMAT_VERSION}")
    blob = raw[start + hlen:]
    if len(blob) != 8 * header["n_values"] or hashlib.sha256(blob).hexdigest() != header["sha256"]:
        raise ModelError(f"{path}: checksum mismatch (truncated or corrupt weight blob)")
    d, K = header["d"], header["K"]
    if expected_features is not None and d != expected_features:
        raise ModelError(f"{path}: model expects {d} features, data has {expected_features}")
    values = np.frombuffer(blob, dtype="<f8").astype(float)
    shapes = []
    dims = [d, *header["widths"], K]
    for a, b in zip(dims[:-1], dims[1:]):
        shapes += [(a, b), (b,)]
    shapes += [(d,), (d,)]
    arrays, pos = [], 0
    for shp in shapes:
        size = int(np.prod(shp))
        arrays.append(values[pos:pos + size].reshape(shp))
        pos += size
    if pos != values.size:
        raise ModelError(f"{path}: weight blob size does not match header shapes")
    mean, scale = arrays[-2], arrays[-1]
    meta = header.get("metadata", {})
    if header["kind"] == "logistic":
        return LogisticBlackBox(arrays[0], arrays[1], mean, scale, meta)
    if header["kind"] == "mlp":
        pairs = list(zip(arrays[:-2:2], arrays[1:-2:2]))
        return MlpBlackBox(pairs, mean, scale, meta)
    raise ModelError(f"{path}: unknown model kind {header['kind']!r}")


# ----------------------------------------------------------------------------
# external process adapter

class ExternalBlackBox(BlackBoxModel):
    """Black-box behind a command that maps CSV feature rows to CSV probability rows.

    Each :meth:`confidence` call sends the whole batch to one process
    invocation; calls from several threads are serialized.
    """

    kind = "external"

    def __init__(self, command, n_features: int, n_classes: int | None = None,
                 timeout: float | None = 600.0):
        super().__init__(n_features, n_classes or 0, {"command": command})
        self.command = shlex.split(command) if isinstance(command, str) else list(command)
        self.timeout = timeout
        self._lock = threading.Lock()

    def _confidence(self, X):
        payload = "\n".join(",".join(format(v, ".17g") for v in row) for row in X) + "\n"
        with self._lock:
            try:
                proc = subprocess.run(self.command, input=payload, capture_output=True,
                                      text=True, timeout=self.timeout)
            except OSError as exc:
                raise ModelError(f"cannot launch {self.command!r}: {exc}") from None
            except subprocess.TimeoutExpired:
                raise ModelError(f"external model timed out after {self.timeout}s") from None
        if proc.returncode != 0:
            raise ModelError(f"external model exited with status {proc.returncode}: "
                             f"{proc.stderr.strip()[:500]}")
        lines = [ln for ln in proc.stdout.splitlines() if ln.strip()]
        if len(lines) != X.shape[0]:
            raise ModelError(f"external model returned {len(lines)} rows for {X.shape[0]} inputs")
        try:
            P = np.array([[float(v) for v in ln.split(",")] for ln in lines])
        except ValueError as exc:
            raise ModelError(f"malformed probability row from external model: {exc}") from None
        if P.ndim != 2:
            raise ModelError("external model rows have inconsistent lengths")
        if self.n_classes == 0:
            self.n_classes = P.shape[1]
        if P.shape[1] != self.n_classes:
            raise ModelError(f"external model returned {P.shape[1]} classes, expected {self.n_classes}")
        if np.any(~np.isfinite(P)) or np.any(P < 0) or np.any(np.abs(P.sum(axis=1) - 1) > 1e-6):
            raise ModelError("external model output is not a probability simplex")
        return P


def external_model(command, n_features: int, n_classes: int | None = None) -> ExternalBlackBox:
    return ExternalBlackBox(command, n_features, n_classes)


def serve(model: BlackBoxModel, stdin=None, stdout=None) -> None:
    """Answer the stdio protocol for ``model``: one probability row per input row."""
    stdin = stdin or sys.stdin
    stdout = stdout or sys.stdout
    rows = [ln for ln in stdin.read().splitlines() if ln.strip()]
    if not rows:
        return
    X = np.array([[float(v) for v in r.split(",")] for r in rows])
    for p in model.confidence(X):
        stdout.write(",".join(format(v, ".17g") for v in p) + "\n")


if __name__ == "__main__":  # python -m gbfl.blackbox MODEL_FILE
    serve(load_model(sys.argv[1]))
