"""Three-layer ReLU classifier with hand-written forward and backward passes.

Weights are stored as ``(fan_in, fan_out)`` matrices so a batch propagates as
``x @ W + b``.

Checkpoint format (JSON, lossless because floats are written with ``repr``)::

    {"format": "debias-lab-mlp", "version": 1, "dims": [d, h1, h2, k],
     "init_seed": 7,
     "layers": [{"weight": [[...], ...], "bias": [...]}, ...]}

``weight`` rows are listed in row-major order (one row per input unit).
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

CHECKPOINT_FORMAT = "debias-lab-mlp"
CHECKPOINT_VERSION = 1
NUM_CLASSES = 2


@dataclass(eq=False)
class MlpParams:
    layers: list[tuple[np.ndarray, np.ndarray]]
    init_seed: int | None = None

    @property
    def dims(self) -> tuple[int, ...]:
        return (self.layers[0][0].shape[0],) + tuple(w.shape[1] for w, _ in self.layers)

    def copy(self) -> MlpParams:
        return MlpParams([(w.copy(), b.copy()) for w, b in self.layers], self.init_seed)

    def flat(self) -> list[np.ndarray]:
        return [a for layer in self.layers for a in layer]

    def __eq__(self, other):
        if not isinstance(other, MlpParams):
            return NotImplemented
        return self.dims == other.dims and all(
            np.array_equal(a, b) for a, b in zip(self.flat(), other.flat())
        )


@dataclass
class ForwardCache:
    params: MlpParams
    inputs: list[np.ndarray]  # input to each affine layer
    preacts: list[np.ndarray]  # pre-activation of each hidden layer


def _check_dims(dims) -> tuple[int, ...]:
    dims = tuple(int(d) for d in dims)
    if len(dims) < 2 or any(d < 1 for d in dims):
        raise ValueError(f"invalid layer dims {dims}")
    if dims[-1] != NUM_CLASSES:
        raise ValueError(f"output dim must be {NUM_CLASSES}, got {dims[-1]}")
    return dims


def init_mlp(dims, seed: int) -> MlpParams:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases.

    The range matches the usual default for linear layers and stays inside the
    He-uniform bound sqrt(6/fan_in).
    """
    dims = _check_dims(dims)
    rng = np.random.default_rng(seed)
    layers = []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        limit = 1.0 / np.sqrt(fan_in)
        layers.append((rng.uniform(-limit, limit, size=(fan_in, fan_out)), np.zeros(fan_out)))
    return MlpParams(layers, init_seed=seed)


def mlp_forward(params: MlpParams, x: np.ndarray) -> tuple[np.ndarray, ForwardCache]:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != params.dims[0]:
        raise ValueError(f"expected input of shape (batch, {params.dims[0]}), got {x.shape}")
    inputs, preacts = [], []
    h = x
    last = len(params.layers) - 1
    for i, (w, b) in enumerate(params.layers):
        inputs.append(h)
        z = h @ w + b
        if i == last:
            return z, ForwardCache(params, inputs, preacts)
        preacts.append(z)
        h = np.maximum(z, 0.0)
    raise AssertionError("unreachable")


def mlp_backward(
    params: MlpParams, cache: ForwardCache, grad_logits: np.ndarray
) -> list[tuple[np.ndarray, np.ndarray]]:
    """Gradients of ``sum(grad_logits * logits)`` for every (weight, bias)."""
    if cache.params is not params:
        raise ValueError("cache was produced by a different parameter set")
    grad = np.asarray(grad_logits, dtype=np.float64)
    if grad.shape != (cache.inputs[0].shape[0], params.dims[-1]):
        raise ValueError(f"upstream gradient has shape {grad.shape}")
    grads = [None] * len(params.layers)
    for i in range(len(params.layers) - 1, -1, -1):
        w, _ = params.layers[i]
        grads[i] = (cache.inputs[i].T @ grad, grad.sum(axis=0))
        if i > 0:
            grad = (grad @ w.T) * (cache.preacts[i - 1] > 0)
    return grads


def softmax_stable(logits: np.ndarray) -> np.ndarray:
    logits = np.asarray(logits, dtype=np.float64)
    if not np.all(np.isfinite(logits)):
        raise ValueError("softmax input contains non-finite values")
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def predict_scores(params: MlpParams, x: np.ndarray) -> np.ndarray:
    """Positive-class probability under the standard softmax."""
    logits, _ = mlp_forward(params, x)
    return softmax_stable(logits)[:, 1]


def save_checkpoint(params: MlpParams, path) -> None:
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "dims": list(params.dims),
        "init_seed": params.init_seed,
        "layers": [{"weight": w.tolist(), "bias": b.tolist()} for w, b in params.layers],
    }
    with open(path, "w") as fh:
        json.dump(doc, fh)
        fh.write("\n")


def load_checkpoint(path) -> MlpParams:
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("format") != CHECKPOINT_FORMAT or doc.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: not a version {CHECKPOINT_VERSION} {CHECKPOINT_FORMAT} file")
    dims = _check_dims(doc["dims"])
    layers = []
    for (fan_in, fan_out), layer in zip(zip(dims[:-1], dims[1:]), doc["layers"]):
        w = np.array(layer["weight"], dtype=np.float64).reshape(fan_in, fan_out)
        b = np.array(layer["bias"], dtype=np.float64).reshape(fan_out)
        layers.append((w, b))
    if len(layers) != len(dims) - 1:
        raise ValueError(f"{path}: layer count does not match dims")
    return MlpParams(layers, init_seed=doc.get("init_seed"))
