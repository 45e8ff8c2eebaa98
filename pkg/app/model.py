"""Tiny differentiable classifiers (softmax regression, one-hidden-layer tanh MLP).

Everything is batched numpy. Per-example gradients are exact, which lets the
feature extractor take a full-parameter gradient norm for every training
instance.
"""
from __future__ import annotations

import json
import logging
import math
import os
from dataclasses import dataclass, field
from typing import Callable, Dict, Optional, Tuple

import numpy as np
from scipy.special import logsumexp, softmax

from app.dataset import Dataset
from app.errors import ArtifactError, ModelError
from app.models import Architecture, TrainHyper
from app.sampler import build_alias, sample_batch

log = logging.getLogger(__name__)

EpochCallback = Callable[[int, "ModelWeights"], None]


@dataclass(eq=False)
class ModelWeights:
    architecture: Architecture
    dim: int
    num_classes: int
    hidden: int
    params: Dict[str, np.ndarray]
    momentum: Dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self) -> None:
        expected = param_shapes(self.architecture, self.dim, self.num_classes, self.hidden)
        for name, shape in expected.items():
            if name not in self.params or self.params[name].shape != shape:
                got = None if name not in self.params else self.params[name].shape
                raise ModelError("model.ModelWeights", f"parameter {name} expected shape {shape}, got {got}")
        if not self.momentum:
            self.momentum = {k: np.zeros_like(v) for k, v in self.params.items()}

    def copy(self, reset_momentum: bool = False) -> "ModelWeights":
        momentum = {} if reset_momentum else {k: v.copy() for k, v in self.momentum.items()}
        return ModelWeights(
            self.architecture,
            self.dim,
            self.num_classes,
            self.hidden,
            {k: v.copy() for k, v in self.params.items()},
            momentum,
        )

    def same_params(self, other: "ModelWeights") -> bool:
        return self.params.keys() == other.params.keys() and all(
            np.array_equal(v, other.params[k]) for k, v in self.params.items()
        )

    def flatten(self) -> np.ndarray:
        return np.concatenate([self.params[k].ravel() for k in sorted(self.params)])

    def with_flat(self, vec: np.ndarray) -> "ModelWeights":
        out = self.copy(reset_momentum=True)
        offset = 0
        for k in sorted(out.params):
            size = out.params[k].size
            out.params[k] = np.asarray(vec[offset:offset + size], dtype=np.float64).reshape(out.params[k].shape)
            offset += size
        return out


def param_shapes(arch: Architecture, dim: int, num_classes: int, hidden: int) -> Dict[str, Tuple[int, ...]]:
    if arch == "softmax_regression":
        return {"W": (num_classes, dim), "b": (num_classes,)}
    if arch == "mlp1":
        return {"W1": (hidden, dim), "b1": (hidden,), "W2": (num_classes, hidden), "b2": (num_classes,)}
    raise ModelError("model.param_shapes", f"unknown architecture {arch!r}")


def init_weights(arch: Architecture, dim: int, num_classes: int, seed: int, hidden: int = 32) -> ModelWeights:
    """Uniform init in +-1/sqrt(fan_in), zero momentum."""
    if dim < 1 or num_classes < 2 or hidden < 1:
        raise ModelError("model.init_weights", f"invalid dims d={dim} K={num_classes} h={hidden}")
    rng = np.random.default_rng(seed)
    params: Dict[str, np.ndarray] = {}
    for name, shape in param_shapes(arch, dim, num_classes, hidden).items():
        fan_in = dim if name in ("W", "b", "W1", "b1") else hidden
        bound = 1.0 / math.sqrt(fan_in)
        params[name] = rng.uniform(-bound, bound, size=shape)
    return ModelWeights(arch, dim, num_classes, hidden, params)


def _check_inputs(w: ModelWeights, x: np.ndarray, y: Optional[np.ndarray] = None) -> None:
    if x.ndim != 2 or x.shape[1] != w.dim:
        raise ModelError("model", f"input dimension mismatch: weights expect d={w.dim}, got shape {x.shape}")
    if y is not None:
        if y.shape != (x.shape[0],):
            raise ModelError("model", "one label per input row is required")
        if y.size and (y.min() < 0 or y.max() >= w.num_classes):
            raise ModelError("model", f"labels must lie in [0, {w.num_classes})")


def _forward(w: ModelWeights, x: np.ndarray) -> Tuple[np.ndarray, Optional[np.ndarray]]:
    """Return (logits, hidden activations or None)."""
    p = w.params
    if w.architecture == "softmax_regression":
        return x @ p["W"].T + p["b"], None
    h = np.tanh(x @ p["W1"].T + p["b1"])
    return h @ p["W2"].T + p["b2"], h


def logits(w: ModelWeights, x: np.ndarray) -> np.ndarray:
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    _check_inputs(w, x)
    return _forward(w, x)[0]


def predict_proba(w: ModelWeights, x: np.ndarray) -> np.ndarray:
    return softmax(logits(w, x), axis=1)


def forward(w: ModelWeights, x: np.ndarray) -> np.ndarray:
    """Softmax output for a single input vector."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ModelError("model.forward", f"expected a single vector, got shape {x.shape}")
    return predict_proba(w, x[None, :])[0]


def per_example_losses(w: ModelWeights, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Cross-entropy per row, computed as logsumexp(z) - z_y."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    y = np.atleast_1d(np.asarray(y, dtype=np.int64))
    _check_inputs(w, x, y)
    z = _forward(w, x)[0]
    return logsumexp(z, axis=1) - z[np.arange(y.size), y]


def per_example_loss(w: ModelWeights, x: np.ndarray, y: int) -> float:
    return float(per_example_losses(w, np.asarray(x)[None, :], np.array([y]))[0])


def _backprop(w: ModelWeights, x: np.ndarray, y: np.ndarray):
    """Per-example error signals: (probs, delta_out, hidden, delta_hidden)."""
    z, h = _forward(w, x)
    probs = softmax(z, axis=1)
    delta_out = probs.copy()
    delta_out[np.arange(y.size), y] -= 1.0
    if h is None:
        return probs, delta_out, None, None
    delta_hidden = (delta_out @ w.params["W2"]) * (1.0 - h ** 2)
    return probs, delta_out, h, delta_hidden


def per_example_grad_norms(w: ModelWeights, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Euclidean norm of the full parameter gradient of each row's CE loss.

    A layer gradient is an outer product delta (x) input plus delta for the bias,
    so its squared norm factors as ||delta||^2 * (||input||^2 + 1).
    """
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    y = np.atleast_1d(np.asarray(y, dtype=np.int64))
    _check_inputs(w, x, y)
    _, delta_out, h, delta_hidden = _backprop(w, x, y)
    if h is None:
        sq = np.sum(delta_out ** 2, axis=1) * (np.sum(x ** 2, axis=1) + 1.0)
    else:
        sq = np.sum(delta_out ** 2, axis=1) * (np.sum(h ** 2, axis=1) + 1.0)
        sq += np.sum(delta_hidden ** 2, axis=1) * (np.sum(x ** 2, axis=1) + 1.0)
    return np.sqrt(sq)


def per_example_grad_norm(w: ModelWeights, x: np.ndarray, y: int) -> float:
    return float(per_example_grad_norms(w, np.asarray(x)[None, :], np.array([y]))[0])


def batch_gradient(w: ModelWeights, x: np.ndarray, y: np.ndarray) -> Dict[str, np.ndarray]:
    """Mean CE gradient over the rows of a minibatch."""
    _, delta_out, h, delta_hidden = _backprop(w, x, y)
    m = float(y.size)
    if h is None:
        return {"W": delta_out.T @ x / m, "b": delta_out.mean(axis=0)}
    return {
        "W2": delta_out.T @ h / m,
        "b2": delta_out.mean(axis=0),
        "W1": delta_hidden.T @ x / m,
        "b1": delta_hidden.mean(axis=0),
    }


def _validate_probs(probs: Optional[np.ndarray], n: int) -> Optional[np.ndarray]:
    if probs is None:
        return None
    probs = np.asarray(probs, dtype=np.float64)
    if probs.shape != (n,):
        raise ModelError("model.train", f"probs must have length {n}, got shape {probs.shape}")
    if np.any(probs < 0) or not np.all(np.isfinite(probs)):
        raise ModelError("model.train", "probs must be finite and nonnegative")
    if abs(probs.sum() - 1.0) > 1e-9:
        raise ModelError("model.train", f"probs must sum to 1, got {probs.sum():.12g}")
    return probs


def train(
    w0: ModelWeights,
    data: Dataset,
    probs: Optional[np.ndarray],
    hyper: TrainHyper,
    callback: Optional[EpochCallback] = None,
) -> ModelWeights:
    """Minibatch Nesterov SGD; batches drawn with replacement from ``probs`` (uniform when None).

    Runs ``epochs * ceil(n / batch_size)`` steps. ``w0`` is never modified.
    """
    n = len(data)
    if n == 0:
        raise ModelError("model.train", "training set is empty")
    if hyper.batch_size > n:
        raise ModelError("model.train", f"batch_size={hyper.batch_size} exceeds training-set size {n}")
    if data.dim != w0.dim or data.num_classes != w0.num_classes:
        raise ModelError("model.train", "weights and dataset disagree on (d, K)")
    probs = _validate_probs(probs, n)

    rng = np.random.default_rng(hyper.seed)
    table = build_alias(np.full(n, 1.0 / n) if probs is None else probs)
    steps_per_epoch = math.ceil(n / hyper.batch_size)
    w = w0.copy()
    x_all, y_all = data.features, data.labels
    mu, wd = hyper.momentum, hyper.weight_decay

    for epoch in range(hyper.epochs):
        lr = hyper.lr_at(epoch)
        for _ in range(steps_per_epoch):
            idx = sample_batch(table, hyper.batch_size, rng)
            grads = batch_gradient(w, x_all[idx], y_all[idx])
            for name, g in grads.items():
                p = w.params[name]
                if wd and name.startswith("W"):
                    g = g + wd * p
                buf = w.momentum[name]
                buf *= mu
                buf += g
                p -= lr * (g + mu * buf)
        if callback is not None:
            callback(epoch, w)
    log.debug("model: trained %s for %d epochs (%d steps)", w.architecture, hyper.epochs, hyper.epochs * steps_per_epoch)
    return w


def evaluate(w: ModelWeights, ds: Dataset) -> float:
    """Top-1 accuracy; argmax ties go to the lowest class index."""
    if len(ds) == 0:
        raise ModelError("model.evaluate", "cannot evaluate on an empty dataset")
    pred = np.argmax(logits(w, ds.features), axis=1)
    return float(np.mean(pred == ds.labels))


def mean_loss(w: ModelWeights, ds: Dataset) -> float:
    return float(np.mean(per_example_losses(w, ds.features, ds.labels)))


def save_weights(w: ModelWeights, path: str) -> None:
    parent = os.path.dirname(path)
    if parent:
        os.makedirs(parent, exist_ok=True)
    payload = {
        "architecture": w.architecture,
        "dim": w.dim,
        "num_classes": w.num_classes,
        "hidden": w.hidden,
        "shapes": {k: list(v.shape) for k, v in w.params.items()},
        "params": {k: v.ravel().tolist() for k, v in w.params.items()},
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, sort_keys=True)
        fh.write("\n")


def load_weights(path: str) -> ModelWeights:
    if not os.path.exists(path):
        raise ArtifactError("model.load_weights", f"missing checkpoint: {path}")
    try:
        with open(path, "r", encoding="utf-8") as fh:
            payload = json.load(fh)
        params = {
            k: np.asarray(payload["params"][k], dtype=np.float64).reshape(tuple(shape))
            for k, shape in payload["shapes"].items()
        }
        return ModelWeights(
            payload["architecture"],
            int(payload["dim"]),
            int(payload["num_classes"]),
            int(payload["hidden"]),
            params,
        )
    except (json.JSONDecodeError, KeyError, ValueError, ModelError) as e:
        raise ArtifactError("model.load_weights", f"malformed checkpoint {path}: {e}")
