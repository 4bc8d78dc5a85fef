"""Feedforward ReLU network: parameters, forward pass with activation taps,
cross-entropy gradients, local SGD training and checkpoint files."""

from __future__ import annotations

import io
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from fedprint import kernels
from fedprint.errors import ConfigError, DataError, ShapeError

CHECKPOINT_MAGIC = b"FPRINT1\n"


@dataclass
class ParamSet:
    """Ordered (weight, bias) pairs; weight ``l`` has shape (dims[l+1], dims[l])."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def __post_init__(self):
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ShapeError("need one bias per weight matrix and at least one layer")
        self.weights = [np.ascontiguousarray(w, dtype=np.float64) for w in self.weights]
        self.biases = [np.ascontiguousarray(b, dtype=np.float64) for b in self.biases]
        for l, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.shape != (w.shape[0],):
                raise ShapeError(f"layer {l}: weight {w.shape} incompatible with bias {b.shape}")
            if l > 0 and w.shape[1] != self.weights[l - 1].shape[0]:
                raise ShapeError(
                    f"layer {l}: input width {w.shape[1]} != previous output {self.weights[l - 1].shape[0]}"
                )

    @property
    def layer_dims(self) -> list[int]:
        return [int(self.weights[0].shape[1])] + [int(w.shape[0]) for w in self.weights]

    @property
    def num_hidden(self) -> int:
        return len(self.weights) - 1

    def copy(self) -> ParamSet:
        return ParamSet([w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def is_finite(self) -> bool:
        return all(np.isfinite(a).all() for a in self.arrays())

    def arrays(self):
        for w, b in zip(self.weights, self.biases):
            yield w
            yield b

    def flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.arrays()])

    def bit_equal(self, other: ParamSet) -> bool:
        if self.layer_dims != other.layer_dims:
            return False
        return all(
            a.tobytes() == b.tobytes() for a, b in zip(self.arrays(), other.arrays())
        )

    def __eq__(self, other):
        if not isinstance(other, ParamSet):
            return NotImplemented
        return self.layer_dims == other.layer_dims and all(
            np.array_equal(a, b) for a, b in zip(self.arrays(), other.arrays())
        )


@dataclass
class ActivationTrace:
    """Post-ReLU outputs of every hidden layer, ``per_layer[h - 1]`` for layer h."""

    per_layer: list[np.ndarray] = field(default_factory=list)

    def layer(self, h: int) -> np.ndarray:
        if not 1 <= h <= len(self.per_layer):
            raise ConfigError(f"hidden layer {h} outside [1, {len(self.per_layer)}]")
        return self.per_layer[h - 1]


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 20
    learning_rate: float = 0.1
    batch_size: int = 32
    seed: int = 0

    def __post_init__(self):
        if int(self.epochs) != self.epochs or self.epochs < 1:
            raise ConfigError(f"epochs must be a positive integer, got {self.epochs!r}")
        if not (self.learning_rate > 0 and np.isfinite(self.learning_rate)):
            raise ConfigError(f"learning_rate must be > 0, got {self.learning_rate!r}")
        if int(self.batch_size) != self.batch_size or self.batch_size < 1:
            raise ConfigError(f"batch_size must be a positive integer, got {self.batch_size!r}")
        if self.seed < 0:
            raise ConfigError("seed must be unsigned")


def init_params(layer_dims, seed: int) -> ParamSet:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases."""
    dims = list(layer_dims)
    if len(dims) < 2 or any(int(d) != d or d < 1 for d in dims):
        raise ConfigError(f"layer_dims needs >= 2 positive entries, got {dims}")
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        bound = np.sqrt(1.0 / fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return ParamSet(weights, biases)


def _check_frames(params: ParamSet, frames) -> np.ndarray:
    x = np.asarray(frames, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != params.layer_dims[0]:
        raise ShapeError(f"frames of shape {x.shape} do not match input width {params.layer_dims[0]}")
    return x


def forward(params: ParamSet, frames) -> tuple[np.ndarray, ActivationTrace]:
    x = _check_frames(params, frames)
    trace = ActivationTrace()
    a = x
    for w, b in zip(params.weights[:-1], params.biases[:-1]):
        a = a @ w.T
        a += b
        np.maximum(a, 0.0, out=a)
        trace.per_layer.append(a)
    logits = a @ params.weights[-1].T
    logits += params.biases[-1]
    return logits, trace


def _check_labels(labels, n_rows: int, num_classes: int) -> np.ndarray:
    y = np.asarray(labels)
    if y.shape != (n_rows,):
        raise ShapeError(f"expected {n_rows} labels, got shape {y.shape}")
    if n_rows == 0:
        raise DataError("empty data")
    if not np.issubdtype(y.dtype, np.integer):
        raise DataError("labels must be integers")
    if y.min() < 0 or y.max() >= num_classes:
        raise DataError(f"labels must lie in [0, {num_classes})")
    return y.astype(np.int64)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def loss_and_grad(params: ParamSet, frames, labels) -> tuple[float, ParamSet]:
    """Mean softmax cross-entropy over frames and its exact gradient."""
    x = _check_frames(params, frames)
    y = _check_labels(labels, x.shape[0], params.layer_dims[-1])
    n = x.shape[0]
    logits, trace = forward(params, x)
    logp = log_softmax(logits)
    rows = np.arange(n)
    loss = float(-logp[rows, y].mean())

    delta = np.exp(logp)
    delta[rows, y] -= 1.0
    delta /= n
    acts = [x] + trace.per_layer
    gw = [None] * len(params.weights)
    gb = [None] * len(params.weights)
    for l in range(len(params.weights) - 1, -1, -1):
        gw[l] = delta.T @ acts[l]
        gb[l] = delta.sum(axis=0)
        if l > 0:
            delta = (delta @ params.weights[l]) * (acts[l] > 0.0)
    return loss, ParamSet(gw, gb)


def mean_loss(params: ParamSet, frames, labels) -> float:
    x = _check_frames(params, frames)
    y = _check_labels(labels, x.shape[0], params.layer_dims[-1])
    logits, _ = forward(params, x)
    return float(-log_softmax(logits)[np.arange(x.shape[0]), y].mean())


def train_local(start: ParamSet, data, cfg: TrainConfig, backend: str | None = None) -> ParamSet:
    """Fine-tune a copy of ``start`` on ``data.train_x``/``data.train_y``.

    One shuffle per epoch from ``cfg.seed``; the input ParamSet is untouched.
    """
    x = np.ascontiguousarray(data.train_x, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] == 0:
        raise DataError("training data is empty")
    x = _check_frames(start, x)
    y = _check_labels(data.train_y, x.shape[0], start.layer_dims[-1])
    rng = np.random.default_rng(cfg.seed)
    orders = np.stack([rng.permutation(x.shape[0]) for _ in range(cfg.epochs)]).astype(np.int64)
    params = start.copy()
    # divergence is reported below, not as numpy warnings mid-run
    with np.errstate(over="ignore", invalid="ignore"):
        kernels.get_sgd_epochs(backend)(
            params.weights, params.biases, x, y, orders, float(cfg.learning_rate), int(cfg.batch_size)
        )
    if not params.is_finite():
        raise DataError("local training diverged (non-finite parameters)")
    return params


# -- checkpoint files -------------------------------------------------------

def dumps_params(params: ParamSet) -> bytes:
    buf = io.BytesIO()
    buf.write(CHECKPOINT_MAGIC)
    buf.write(f"{len(params.weights)}\n".encode())
    for w, b in zip(params.weights, params.biases):
        buf.write(f"{w.shape[0]} {w.shape[1]}\n".encode())
        buf.write(w.astype("<f8").tobytes())
        buf.write(b.astype("<f8").tobytes())
    return buf.getvalue()


def _read_line(stream, what: str) -> bytes:
    line = stream.readline()
    if not line.endswith(b"\n"):
        raise DataError(f"truncated checkpoint while reading {what}")
    return line[:-1]


def loads_params(blob: bytes) -> ParamSet:
    stream = io.BytesIO(blob)
    if stream.read(len(CHECKPOINT_MAGIC)) != CHECKPOINT_MAGIC:
        raise DataError("not a checkpoint file (bad magic)")
    try:
        n_layers = int(_read_line(stream, "layer count"))
    except ValueError as exc:
        raise DataError("malformed layer count") from exc
    weights, biases = [], []
    for l in range(n_layers):
        try:
            rows, cols = (int(tok) for tok in _read_line(stream, f"layer {l} header").split())
        except ValueError as exc:
            raise DataError(f"malformed header for layer {l}") from exc
        raw_w = stream.read(rows * cols * 8)
        raw_b = stream.read(rows * 8)
        if len(raw_w) != rows * cols * 8 or len(raw_b) != rows * 8:
            raise DataError(f"truncated data for layer {l}")
        weights.append(np.frombuffer(raw_w, dtype="<f8").reshape(rows, cols).astype(np.float64))
        biases.append(np.frombuffer(raw_b, dtype="<f8").astype(np.float64))
    if stream.read(1):
        raise DataError("trailing bytes after last layer")
    return ParamSet(weights, biases)


def save_params(params: ParamSet, path) -> None:
    Path(path).write_bytes(dumps_params(params))


def load_params(path) -> ParamSet:
    return loads_params(Path(path).read_bytes())
