"""Meta-training, few-shot fine-tuning and ensemble localization.

Random streams are derived from the master seed by counter-based
splitting (:func:`pacmeta.prob.spawn`), so every stage and every iteration
owns an independent stream and reruns are bit-identical.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from pacmeta.errors import ConfigError, InputError
from pacmeta.net import Architecture, Task
from pacmeta.pacoh import TemperatureConfig, particle_scores
from pacmeta.prob import HyperPrior, sample_particle, spawn
from pacmeta.svgd import ParticleSet, svgd_step

log = logging.getLogger(__name__)

# stream ids for spawn(seed, STREAM, ...)
_INIT, _META, _FINETUNE, _EVAL, _PROBE = 0, 1, 2, 3, 4


@dataclass(frozen=True)
class MetaConfig:
    n_tasks_per_iter: int = 10
    max_iters: int = 1000
    eta: float = 0.002
    K: int = 5
    L: int = 5
    beta: float | None = None
    lam: float | None = None
    seed: int = 0
    early_stop_window: int = 0
    eval_every: int = 50
    sigma_p: float = 0.5
    eta_decay: float = 1.0
    finetune_steps: int = 200
    checkpoint_every: int = 10
    n_networks: int = 10

    def __post_init__(self):
        for name in ("n_tasks_per_iter", "K", "L", "n_networks", "eval_every", "checkpoint_every"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        for name in ("max_iters", "finetune_steps", "early_stop_window"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")
        if not self.eta > 0 or not self.sigma_p > 0 or not 0 < self.eta_decay <= 1:
            raise ConfigError("eta and sigma_p must be positive and eta_decay in (0, 1]")

    @property
    def hyper(self) -> HyperPrior:
        return HyperPrior(self.sigma_p)

    def resolved(self, n_total_tasks: int) -> "MetaConfig":
        """Fill ``lam`` with the size of the training-task pool when unset."""
        if self.lam is not None:
            return self
        return replace(self, lam=float(max(n_total_tasks, 1)))

    def temperature(self, adaptation: bool = False) -> TemperatureConfig:
        if self.lam is None:
            raise ConfigError("lambda is unresolved; call MetaConfig.resolved(n_tasks) first")
        return TemperatureConfig(self.lam, self.beta, self.L, adaptation)


class TaskPool:
    """A fixed collection of training tasks sampled without replacement per draw."""

    def __init__(self, tasks: Sequence[Task]):
        self.tasks = list(tasks)

    def __len__(self):
        return len(self.tasks)

    def sample(self, n: int, rng: np.random.Generator) -> list[Task]:
        if not self.tasks:
            raise ConfigError("task source is empty")
        n = min(n, len(self.tasks))
        return [self.tasks[i] for i in rng.choice(len(self.tasks), size=n, replace=False)]


def init_particles(model, cfg: MetaConfig) -> ParticleSet:
    rng = spawn(cfg.seed, _INIT)
    return ParticleSet(tuple(sample_particle(cfg.hyper, model.param_count, rng) for _ in range(cfg.K)))


def meta_train(cfg: MetaConfig, task_source, model, probe: Callable | None = None,
               callback: Callable | None = None, init: ParticleSet | None = None) -> ParticleSet:
    """SVGD on the PAC-optimal hyper-posterior over prior particles.

    ``probe(pset) -> float`` is a held-out adaptation error used for early
    stopping; ``callback(step, pset, tasks)`` fires every ``eval_every``
    iterations.
    """
    if len(task_source) == 0:
        raise ConfigError("task source is exhausted before the first iteration")
    cfg = cfg.resolved(len(task_source))
    temp = cfg.temperature()
    pset = init_particles(model, cfg) if init is None else init

    history: list[float] = []
    best, stale = np.inf, 0
    for j in range(cfg.max_iters):
        rng = spawn(cfg.seed, _META, j)
        tasks = task_source.sample(cfg.n_tasks_per_iter, rng)
        scores = particle_scores(model, pset.particles, tasks, temp, cfg.hyper, rng)
        pset = svgd_step(pset, scores, cfg.eta * cfg.eta_decay**j)

        step = j + 1
        if step % cfg.eval_every == 0 or step == cfg.max_iters:
            if callback is not None:
                callback(step, pset, tasks)
            if cfg.early_stop_window and probe is not None:
                history.append(float(probe(pset)))
                avg = float(np.mean(history[-cfg.early_stop_window:]))
                if avg < best:
                    best, stale = avg, 0
                else:
                    stale += 1
                if stale >= cfg.early_stop_window:
                    log.info("early stop at iteration %d (windowed probe error %.4f)", step, avg)
                    break
    return pset


def adaptation_weight(lam: float, beta: float) -> float:
    return lam / (lam + beta)


def fine_tune(pset: ParticleSet, s0: Task, cfg: MetaConfig, model, steps: int | None = None,
              callback: Callable | None = None) -> ParticleSet:
    """Single-task SVGD from the meta-learned particles; the input set is not modified.

    ``callback(step, pset)`` fires at step 0 and every ``checkpoint_every`` steps.
    """
    if len(s0) == 0:
        raise InputError("fine-tuning set is empty")
    steps = cfg.finetune_steps if steps is None else steps
    temp = cfg.temperature(adaptation=True)
    if callback is not None:
        callback(0, pset)
    for j in range(steps):
        rng = spawn(cfg.seed, _FINETUNE, j)
        scores = particle_scores(model, pset.particles, [s0], temp, cfg.hyper, rng)
        pset = svgd_step(pset, scores, cfg.eta * cfg.eta_decay**j)
        if callback is not None and ((j + 1) % cfg.checkpoint_every == 0 or j + 1 == steps):
            callback(j + 1, pset)
    return pset


@dataclass(frozen=True)
class EvalReport:
    per_point_error: np.ndarray
    per_point_uncertainty: np.ndarray
    n_networks: int
    mean_error: float = field(init=False)
    std_error: float = field(init=False)
    mean_uncertainty: float = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "mean_error", float(np.mean(self.per_point_error)))
        object.__setattr__(self, "std_error", float(np.std(self.per_point_error)))
        object.__setattr__(self, "mean_uncertainty", float(np.mean(self.per_point_uncertainty)))


def prediction_table(model, pset: ParticleSet, X, n_networks: int, seed: int) -> np.ndarray:
    """Predictions of ``n_networks`` sampled networks per particle, shape ``(K, N, m, 2)``."""
    if n_networks < 1:
        raise InputError(f"need at least one network per particle, got {n_networks}")
    rng = spawn(seed, _EVAL)
    out = []
    for phi in pset.particles:
        eps = rng.standard_normal((n_networks, len(phi)))
        thetas = phi.mu + np.exp(phi.log_sigma) * eps
        out.append(model.predict_batch(thetas, X))
    return np.stack(out)


def report_from_predictions(preds: np.ndarray, Y) -> EvalReport:
    """Two-level average error and ensemble spread from a ``(K, N, m, 2)`` table.

    Per-point uncertainty is the RMS Euclidean deviation of all ``K * N``
    predictions from their ensemble mean.
    """
    K, N, m, _ = preds.shape
    dist = np.linalg.norm(preds - np.asarray(Y)[None, None], axis=-1)  # (K, N, m)
    per_particle = dist.mean(axis=1)  # average over the N networks of each particle
    per_point = per_particle.mean(axis=0)  # then over particles

    flat = preds.reshape(K * N, m, -1)
    # centring on the first member makes identical ensembles give exactly 0
    centred = flat - flat[:1]
    dev = centred - centred.mean(axis=0, keepdims=True)
    uncertainty = np.sqrt(np.mean(np.sum(dev**2, axis=-1), axis=0))
    return EvalReport(per_point, uncertainty, K * N)


def evaluate(model, pset: ParticleSet, s_test: Task, n_networks: int = 10, seed: int = 0) -> EvalReport:
    if len(s_test) == 0:
        raise InputError("test set is empty")
    return report_from_predictions(prediction_table(model, pset, s_test.X, n_networks, seed), s_test.Y)


def point_report(model, theta, s_test: Task) -> EvalReport:
    """Evaluation of a single deterministic network (K = N = 1)."""
    preds = model.predict_batch(np.asarray(theta, dtype=float)[None], s_test.X)
    return report_from_predictions(preds[None], s_test.Y)


def default_architecture(input_dim: int, hidden_dims=(32, 32, 32, 32)) -> Architecture:
    return Architecture(input_dim, tuple(hidden_dims))
