"""Fixed-topology ReLU regression network over a flat parameter vector.

Flat layout (frozen, checkpoints depend on it): layers in order, and for
each layer the weight matrix ``W`` of shape ``(fan_in, fan_out)`` in
row-major order followed by the bias ``b`` of length ``fan_out``.

A layer computes ``z = h @ W / sqrt(fan_in) + b``.  The ``1/sqrt(fan_in)``
factor keeps activations O(1) when weights are drawn with unit-order
variance, which is what the Gaussian priors produce.  Hidden layers apply
ReLU (derivative 0 at 0); the output layer is affine.

Every batched routine takes ``thetas`` of shape ``(B, P)`` and evaluates
``B`` networks at once.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from pacmeta.errors import InputError, NumericError


@dataclass(frozen=True)
class Task:
    """A labelled set of fingerprints ``X`` (m, d_x) and coordinates ``Y`` (m, 2)."""

    X: np.ndarray
    Y: np.ndarray
    domain_id: int = 0

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float)
        Y = np.asarray(self.Y, dtype=float)
        if X.ndim != 2 or Y.ndim != 2 or X.shape[0] != Y.shape[0]:
            raise InputError(f"task arrays have incompatible shapes {X.shape} and {Y.shape}")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "Y", Y)
        object.__setattr__(self, "domain_id", int(self.domain_id))

    def __len__(self):
        return self.X.shape[0]

    def __eq__(self, other):
        if not isinstance(other, Task):
            return NotImplemented
        return (
            self.domain_id == other.domain_id
            and np.array_equal(self.X, other.X)
            and np.array_equal(self.Y, other.Y)
        )

    __hash__ = None

    def split(self, k: int) -> tuple["Task", "Task"]:
        """First ``k`` samples and the rest, same domain."""
        return (
            Task(self.X[:k], self.Y[:k], self.domain_id),
            Task(self.X[k:], self.Y[k:], self.domain_id),
        )


@dataclass(frozen=True)
class Architecture:
    input_dim: int
    hidden_dims: tuple[int, ...] = (32, 32, 32, 32)
    output_dim: int = 2
    layout: tuple = field(init=False, repr=False, compare=False)  # (fan_in, fan_out, w_start, w_end, b_end) per layer

    def __post_init__(self):
        hidden = tuple(int(h) for h in self.hidden_dims)
        object.__setattr__(self, "hidden_dims", hidden)
        if self.input_dim < 1 or self.output_dim < 1 or any(h < 1 for h in hidden):
            raise InputError(f"layer widths must be positive: {self}")
        dims = (int(self.input_dim), *hidden, int(self.output_dim))
        shapes = []
        offset = 0
        for fan_in, fan_out in zip(dims[:-1], dims[1:]):
            w_end = offset + fan_in * fan_out
            shapes.append((fan_in, fan_out, offset, w_end, w_end + fan_out))
            offset = w_end + fan_out
        object.__setattr__(self, "layout", tuple(shapes))

    @property
    def param_count(self) -> int:
        return self.layout[-1][4]

    def to_dict(self) -> dict:
        return {
            "input_dim": int(self.input_dim),
            "hidden_dims": list(self.hidden_dims),
            "output_dim": int(self.output_dim),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Architecture":
        return cls(int(d["input_dim"]), tuple(d["hidden_dims"]), int(d.get("output_dim", 2)))

    def unflatten(self, thetas: np.ndarray) -> list[tuple[np.ndarray, np.ndarray]]:
        """Views ``(W, b)`` per layer with leading batch dims preserved."""
        lead = thetas.shape[:-1]
        return [
            (
                thetas[..., start:w_end].reshape(*lead, fan_in, fan_out),
                thetas[..., w_end:b_end],
            )
            for fan_in, fan_out, start, w_end, b_end in self.layout
        ]

    def _check(self, thetas, X):
        if thetas.shape[-1] != self.param_count:
            raise InputError(
                f"parameter vector has length {thetas.shape[-1]}, expected {self.param_count}"
            )
        if X.shape[-1] != self.input_dim:
            raise InputError(f"feature length {X.shape[-1]} != input_dim {self.input_dim}")

    def predict_batch(self, thetas, X) -> np.ndarray:
        """Predictions of shape ``(B, m, output_dim)``.

        ``X`` is either shared ``(m, d_x)`` or per-network ``(B, m, d_x)``.
        """
        thetas = np.atleast_2d(np.asarray(thetas, dtype=float))
        X = np.asarray(X, dtype=float)
        self._check(thetas, X)
        h = X
        layers = self.unflatten(thetas)
        for i, (W, b) in enumerate(layers):
            z = (h @ W) * (1.0 / np.sqrt(W.shape[-2])) + b[..., None, :]
            h = z if i == len(layers) - 1 else np.maximum(z, 0.0)
        return h

    def loss_grad_batch(self, thetas, X, Y) -> tuple[np.ndarray, np.ndarray]:
        """Mean squared Euclidean error per network and its gradient.

        Returns ``(losses (B,), grads (B, P))``.
        """
        thetas = np.atleast_2d(np.asarray(thetas, dtype=float))
        X = np.asarray(X, dtype=float)
        Y = np.asarray(Y, dtype=float)
        self._check(thetas, X)
        m = X.shape[-2]
        if m == 0:
            raise InputError("loss of an empty task is undefined")
        layers = self.unflatten(thetas)
        scales = [1.0 / np.sqrt(W.shape[-2]) for W, _ in layers]

        inputs = []
        pre = []
        h = X
        for i, ((W, b), s) in enumerate(zip(layers, scales)):
            inputs.append(h)
            z = (h @ W) * s + b[..., None, :]
            pre.append(z)
            h = z if i == len(layers) - 1 else np.maximum(z, 0.0)

        resid = h - Y
        losses = np.einsum("bmk,bmk->b", resid, resid) / m

        grads = np.empty_like(thetas)
        dz = resid * (2.0 / m)
        for i in range(len(layers) - 1, -1, -1):
            W, _ = layers[i]
            fan_in, fan_out, start, w_end, b_end = self.layout[i]
            h_in = inputs[i]
            if h_in.ndim == 2:
                dW = np.einsum("mi,bmo->bio", h_in, dz)
            else:
                dW = np.swapaxes(h_in, -1, -2) @ dz
            grads[:, start:w_end] = (dW * scales[i]).reshape(len(thetas), -1)
            grads[:, w_end:b_end] = dz.sum(axis=-2)
            if i > 0:
                dh = (dz @ np.swapaxes(W, -1, -2)) * scales[i]
                dz = dh * (pre[i - 1] > 0)
        return losses, grads


def _as_task(task: Task) -> Task:
    if len(task) == 0:
        raise InputError("task is empty")
    return task


def forward(arch: Architecture, theta, x) -> np.ndarray:
    """Prediction for a single feature vector ``x``; returns shape ``(output_dim,)``."""
    x = np.asarray(x, dtype=float)
    if x.ndim != 1:
        raise InputError("forward expects a single feature vector")
    return arch.predict_batch(np.asarray(theta, dtype=float)[None], x[None])[0, 0]


def predict(arch: Architecture, theta, X) -> np.ndarray:
    return arch.predict_batch(np.asarray(theta, dtype=float)[None], X)[0]


def loss(arch: Architecture, theta, task: Task) -> float:
    return loss_grad(arch, theta, task)[0]


def loss_grad(arch: Architecture, theta, task: Task) -> tuple[float, np.ndarray]:
    task = _as_task(task)
    values, grads = arch.loss_grad_batch(np.asarray(theta, dtype=float)[None], task.X, task.Y)
    if not np.isfinite(values[0]):
        raise NumericError("non-finite loss")
    return float(values[0]), grads[0]
