"""Comparison methods: first-order MAML, point-network fine-tuning and KNN."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from pacmeta.errors import ConfigError, InputError
from pacmeta.net import Architecture, Task
from pacmeta.prob import spawn


@dataclass(frozen=True)
class MamlConfig:
    inner_lr: float = 0.01
    inner_steps: int = 5
    meta_lr: float = 0.002
    meta_iters: int = 1000
    n_tasks_per_iter: int = 10
    support_size: int = 25
    seed: int = 0

    def __post_init__(self):
        if not (self.inner_lr > 0 and self.meta_lr > 0):
            raise ConfigError("learning rates must be positive")
        if self.inner_steps < 0 or self.meta_iters < 0 or self.n_tasks_per_iter < 1 or self.support_size < 1:
            raise ConfigError(f"invalid MAML configuration {self}")


def init_theta(arch: Architecture, seed: int) -> np.ndarray:
    """Unit-variance weights and zero biases (the forward pass divides by sqrt(fan_in))."""
    rng = spawn(seed, 7)
    theta = np.zeros(arch.param_count)
    for fan_in, fan_out, start, w_end, _ in arch.layout:
        theta[start:w_end] = rng.standard_normal(fan_in * fan_out)
    return theta


def _gd(arch, theta, task: Task, steps: int, lr: float) -> np.ndarray:
    for _ in range(steps):
        _, g = arch.loss_grad_batch(theta[None], task.X, task.Y)
        theta = theta - lr * g[0]
    return theta


def maml_outer_grad(arch: Architecture, theta0, tasks: Sequence[Task], cfg: MamlConfig) -> np.ndarray:
    """First-order MAML meta-gradient averaged over ``tasks``.

    Each task is split into a support set (first ``support_size`` samples)
    used for the inner adaptation and a query set where the gradient is
    taken at the adapted parameters.
    """
    total = np.zeros_like(theta0)
    for task in tasks:
        support, query = task.split(cfg.support_size)
        if len(query) == 0:
            raise InputError(f"task of size {len(task)} leaves no query samples")
        adapted = _gd(arch, theta0, support, cfg.inner_steps, cfg.inner_lr)
        _, g = arch.loss_grad_batch(adapted[None], query.X, query.Y)
        total += g[0]
    return total / len(tasks)


def maml_meta_train(cfg: MamlConfig, task_source, arch: Architecture,
                    callback: Callable | None = None, every: int = 50) -> np.ndarray:
    if len(task_source) == 0:
        raise ConfigError("task source is exhausted before the first iteration")
    theta = init_theta(arch, cfg.seed)
    for j in range(cfg.meta_iters):
        rng = spawn(cfg.seed, 8, j)
        tasks = task_source.sample(cfg.n_tasks_per_iter, rng)
        theta = theta - cfg.meta_lr * maml_outer_grad(arch, theta, tasks, cfg)
        if callback is not None and (j + 1) % every == 0:
            callback(j + 1, theta)
    return theta


def finetune_point(arch: Architecture, theta0, s0: Task, steps: int, lr: float,
                   callback: Callable | None = None, every: int = 10) -> np.ndarray:
    """Plain gradient descent on the squared error over ``s0``.

    ``callback(step, theta)`` fires at step 0 and every ``every`` steps.
    """
    if len(s0) == 0:
        raise InputError("fine-tuning set is empty")
    theta = np.array(theta0, dtype=float)
    if callback is not None:
        callback(0, theta)
    for j in range(steps):
        theta = _gd(arch, theta, s0, 1, lr)
        if callback is not None and ((j + 1) % every == 0 or j + 1 == steps):
            callback(j + 1, theta)
    return theta


def knn_predict(train: Task, x, k: int) -> np.ndarray:
    """Mean coordinate of the ``k`` nearest fingerprints; ties go to the lower index.

    ``x`` may be one feature vector or a matrix of queries.
    """
    if k < 1:
        raise InputError(f"k must be >= 1, got {k}")
    if k > len(train):
        raise InputError(f"k={k} exceeds the {len(train)} training samples")
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    Q = np.atleast_2d(x)
    d = np.sum((Q[:, None, :] - train.X[None, :, :]) ** 2, axis=-1)
    idx = np.argsort(d, axis=1, kind="stable")[:, :k]
    out = train.Y[idx].mean(axis=1)
    return out[0] if single else out
