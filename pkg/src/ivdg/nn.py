"""Feed-forward networks, softmax cross-entropy, backprop and SGD in numpy.

Models are immutable from the caller's point of view: :func:`sgd_step`
returns a new model and leaves the old one untouched.
"""

from __future__ import annotations

import json
from collections.abc import Sequence
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from .errors import ContractViolation, InvalidArgumentError, ShapeError

CHECKPOINT_FORMAT = "ivdg-checkpoint/1"


@dataclass(frozen=True, eq=False)
class MlpModel:
    """Fully connected network with ReLU hidden layers and a linear output.

    ``weights[i]`` has shape ``(layer_dims[i], layer_dims[i + 1])``.
    """

    layer_dims: tuple[int, ...]
    weights: tuple[np.ndarray, ...]
    biases: tuple[np.ndarray, ...]

    def __post_init__(self) -> None:
        dims = tuple(int(d) for d in self.layer_dims)
        if len(dims) < 2 or min(dims) < 1:
            raise InvalidArgumentError(f"layer_dims must hold >= 2 positive ints, got {self.layer_dims}")
        if len(self.weights) != len(dims) - 1 or len(self.biases) != len(dims) - 1:
            raise ShapeError("one weight matrix and one bias vector per layer transition")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape != (dims[i], dims[i + 1]) or b.shape != (dims[i + 1],):
                raise ShapeError(f"layer {i}: weight {w.shape}, bias {b.shape} do not match dims {dims}")
        object.__setattr__(self, "layer_dims", dims)
        object.__setattr__(self, "weights", tuple(self.weights))
        object.__setattr__(self, "biases", tuple(self.biases))

    @property
    def d_in(self) -> int:
        return self.layer_dims[0]

    @property
    def d_out(self) -> int:
        return self.layer_dims[-1]

    def params(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    def with_params(self, params: Sequence[np.ndarray]) -> MlpModel:
        return MlpModel(self.layer_dims, tuple(params[0::2]), tuple(params[1::2]))

    def copy(self) -> MlpModel:
        return self.with_params([p.copy() for p in self.params()])

    def __call__(self, batch: np.ndarray) -> np.ndarray:
        return forward(self, batch)[0]


@dataclass(frozen=True, eq=False)
class LinearClassifier:
    """Affine map from features to class logits."""

    weight: np.ndarray
    bias: np.ndarray

    def __post_init__(self) -> None:
        if self.weight.ndim != 2 or self.bias.shape != (self.weight.shape[1],):
            raise ShapeError(f"weight {self.weight.shape} and bias {self.bias.shape} do not conform")

    @property
    def n_classes(self) -> int:
        return self.weight.shape[1]

    def params(self) -> list[np.ndarray]:
        return [self.weight, self.bias]

    def with_params(self, params: Sequence[np.ndarray]) -> LinearClassifier:
        return LinearClassifier(params[0], params[1])

    def copy(self) -> LinearClassifier:
        return LinearClassifier(self.weight.copy(), self.bias.copy())

    def __call__(self, features: np.ndarray) -> np.ndarray:
        return classifier_forward(self, features)


@dataclass(frozen=True)
class SgdConfig:
    learning_rate: float = 0.01
    batch_size: int = 64
    momentum: float = 0.0

    def __post_init__(self) -> None:
        if not self.learning_rate >= 0:
            raise InvalidArgumentError(f"learning_rate must be >= 0, got {self.learning_rate}")
        if self.batch_size < 1:
            raise InvalidArgumentError(f"batch_size must be >= 1, got {self.batch_size}")
        if not 0.0 <= self.momentum < 1.0:
            raise InvalidArgumentError(f"momentum must lie in [0, 1), got {self.momentum}")


@dataclass(frozen=True, eq=False)
class ForwardCache:
    """Activations saved by :func:`forward` for the matching :func:`backward`."""

    model: MlpModel
    inputs: tuple[np.ndarray, ...]
    pre_activations: tuple[np.ndarray, ...]


def init_mlp(layer_dims: Sequence[int], rng: np.random.Generator) -> MlpModel:
    """He-style uniform initialization: ``U(-sqrt(6/fan_in), sqrt(6/fan_in))``, zero biases."""
    dims = tuple(int(d) for d in layer_dims)
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        bound = np.sqrt(6.0 / fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return MlpModel(dims, tuple(weights), tuple(biases))


def init_classifier(d_feat: int, n_classes: int, rng: np.random.Generator) -> LinearClassifier:
    bound = np.sqrt(6.0 / d_feat)
    return LinearClassifier(rng.uniform(-bound, bound, size=(d_feat, n_classes)), np.zeros(n_classes))


def forward(model: MlpModel, batch: np.ndarray) -> tuple[np.ndarray, ForwardCache]:
    """Run ``batch`` (``b x d_in``) through ``model``; return output and cache."""
    h = np.asarray(batch, dtype=float)
    if h.ndim != 2 or h.shape[1] != model.d_in:
        raise ShapeError(f"expected a batch of width {model.d_in}, got shape {h.shape}")
    inputs, pre = [], []
    last = len(model.weights) - 1
    for i, (w, b) in enumerate(zip(model.weights, model.biases)):
        inputs.append(h)
        z = h @ w + b
        pre.append(z)
        h = z if i == last else np.maximum(z, 0.0)
    return h, ForwardCache(model, tuple(inputs), tuple(pre))


def backward(model: MlpModel, cache: ForwardCache, grad_out: np.ndarray) -> tuple[list[np.ndarray], np.ndarray]:
    """Backpropagate ``grad_out`` (dLoss/dOutput).

    Returns:
        ``(param_grads, grad_input)`` where ``param_grads`` follows
        :meth:`MlpModel.params` ordering.

    Raises:
        ContractViolation: If ``cache`` was produced by a different model.
    """
    if cache.model is not model:
        raise ContractViolation("stale forward cache: it belongs to a different model instance")
    g = np.asarray(grad_out, dtype=float)
    if g.shape != cache.pre_activations[-1].shape:
        raise ShapeError(f"grad_out shape {g.shape} does not match output {cache.pre_activations[-1].shape}")
    grads: list[np.ndarray] = [None] * (2 * len(model.weights))  # type: ignore[list-item]
    last = len(model.weights) - 1
    for i in range(last, -1, -1):
        if i != last:
            g = g * (cache.pre_activations[i] > 0)
        grads[2 * i] = cache.inputs[i].T @ g
        grads[2 * i + 1] = g.sum(axis=0)
        g = g @ model.weights[i].T
    return grads, g


def classifier_forward(clf: LinearClassifier, features: np.ndarray) -> np.ndarray:
    features = np.asarray(features, dtype=float)
    if features.ndim != 2 or features.shape[1] != clf.weight.shape[0]:
        raise ShapeError(f"expected features of width {clf.weight.shape[0]}, got {features.shape}")
    return features @ clf.weight + clf.bias


def classifier_backward(
    clf: LinearClassifier, features: np.ndarray, grad_logits: np.ndarray
) -> tuple[list[np.ndarray], np.ndarray]:
    """Return ``([dW, db], d/dfeatures)`` for ``logits = features @ W + b``."""
    return [features.T @ grad_logits, grad_logits.sum(axis=0)], grad_logits @ clf.weight.T


def cross_entropy_loss(logits: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean softmax cross-entropy and its gradient with respect to ``logits``."""
    logits = np.asarray(logits, dtype=float)
    labels = np.asarray(labels)
    b, c = logits.shape
    if labels.shape != (b,):
        raise ShapeError(f"labels shape {labels.shape} does not match batch size {b}")
    if b and (labels.min() < 0 or labels.max() >= c):
        raise InvalidArgumentError(f"labels must lie in [0, {c})")
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    log_p = shifted - log_z
    rows = np.arange(b)
    loss = float(-log_p[rows, labels].mean())
    grad = np.exp(log_p)
    grad[rows, labels] -= 1.0
    return max(loss, 0.0), grad / b


class SgdOptimizer:
    """Plain or momentum SGD over an ordered list of parameter arrays.

    ``v <- momentum * v + grad``; ``p <- p - lr * v``.
    """

    def __init__(self, cfg: SgdConfig) -> None:
        self.cfg = cfg
        self._velocity: list[np.ndarray] | None = None

    def step(self, model, grads: Sequence[np.ndarray]):
        params = model.params()
        if len(grads) != len(params) or any(g.shape != p.shape for g, p in zip(grads, params)):
            raise ShapeError("gradient shapes do not match parameter shapes")
        if self.cfg.momentum > 0:
            if self._velocity is None:
                self._velocity = [np.zeros_like(p) for p in params]
            self._velocity = [self.cfg.momentum * v + g for v, g in zip(self._velocity, grads)]
            direction = self._velocity
        else:
            direction = list(grads)
        lr = self.cfg.learning_rate
        return model.with_params([p - lr * d for p, d in zip(params, direction)])


def sgd_step(model, grads: Sequence[np.ndarray], cfg: SgdConfig):
    """One stateless SGD step; momentum needs an :class:`SgdOptimizer`."""
    return SgdOptimizer(SgdConfig(cfg.learning_rate, cfg.batch_size, 0.0)).step(model, grads)


def save_checkpoint(model, path: str | Path, seed_lineage: Sequence[Any] = ()) -> Path:
    """Write a model to an ``.npz`` archive.

    The archive carries the format tag, model kind, layer dims, the
    parameters flattened row-major into one float64 vector, and the seed
    lineage as JSON.
    """
    path = Path(path)
    if isinstance(model, MlpModel):
        kind, dims = "mlp", list(model.layer_dims)
    elif isinstance(model, LinearClassifier):
        kind, dims = "linear", list(model.weight.shape)
    else:
        raise InvalidArgumentError(f"cannot checkpoint {type(model).__name__}")
    flat = np.concatenate([np.ravel(p, order="C") for p in model.params()]).astype(np.float64)
    header = json.dumps({"format": CHECKPOINT_FORMAT, "kind": kind, "layer_dims": dims,
                         "seed_lineage": list(seed_lineage)})
    with path.open("wb") as fh:
        np.savez(fh, header=np.array(header), parameters=flat)
    return path


def load_checkpoint(path: str | Path):
    """Inverse of :func:`save_checkpoint`; returns ``(model, seed_lineage)``."""
    with np.load(Path(path), allow_pickle=False) as archive:
        header = json.loads(str(archive["header"]))
        flat = archive["parameters"]
    if header.get("format") != CHECKPOINT_FORMAT:
        raise InvalidArgumentError(f"unknown checkpoint format {header.get('format')!r}")
    dims = header["layer_dims"]
    if header["kind"] == "mlp":
        shapes = []
        for fan_in, fan_out in zip(dims[:-1], dims[1:]):
            shapes.extend([(fan_in, fan_out), (fan_out,)])
    else:
        shapes = [tuple(dims), (dims[1],)]
    params, offset = [], 0
    for shape in shapes:
        size = int(np.prod(shape))
        params.append(flat[offset : offset + size].reshape(shape).copy())
        offset += size
    if offset != flat.size:
        raise InvalidArgumentError("checkpoint parameter count does not match its layer dims")
    if header["kind"] == "mlp":
        model = MlpModel(tuple(dims), tuple(params[0::2]), tuple(params[1::2]))
    else:
        model = LinearClassifier(params[0], params[1])
    return model, header["seed_lineage"]
