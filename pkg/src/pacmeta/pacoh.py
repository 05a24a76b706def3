"""PAC-optimal hyper-posterior: Monte-Carlo log-partition estimates and scores.

For a prior particle ``phi`` and a task ``S`` the generalized marginal
likelihood ``Z = E_{theta ~ P_phi}[exp(-beta * loss(theta, S))]`` is
estimated from ``L`` reparameterized draws.  The unnormalized log density
of the hyper-posterior over particles is

    ln P(phi) + lam / (lam + n * beta) * sum_i ln Z(S_i, phi)

and its gradient is what SVGD transports particles along.

Models are duck-typed: anything with ``param_count`` and
``loss_grad_batch(thetas, X, Y) -> (losses, grads)`` works.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from pacmeta.errors import ConfigError, InputError, NumericError
from pacmeta.net import Task
from pacmeta.prob import HyperPrior, PriorParticle, gaussian_kl

# ln Z <= 0 holds exactly for nonnegative losses; allow for rounding only
_LOGZ_SLACK = 1e-9


@dataclass(frozen=True)
class TemperatureConfig:
    """Inverse temperatures and Monte-Carlo size.

    ``beta=None`` means each task uses its own sample count as temperature.
    ``adaptation`` switches the data weight to the single-task
    fine-tuning form ``lam / (lam + beta)``.
    """

    lam: float
    beta: float | None = None
    mc_samples: int = 5
    adaptation: bool = False

    def __post_init__(self):
        if not self.lam > 0:
            raise ConfigError(f"lambda must be positive, got {self.lam}")
        if self.beta is not None and not self.beta > 0:
            raise ConfigError(f"beta must be positive, got {self.beta}")
        if self.mc_samples < 1:
            raise ConfigError(f"mc_samples must be >= 1, got {self.mc_samples}")

    def beta_for(self, task: Task) -> float:
        return float(len(task)) if self.beta is None else float(self.beta)

    def data_weight(self, tasks: Sequence[Task]) -> float:
        """``lam / (lam + n * beta)``; beta is averaged when per-task."""
        n = len(tasks)
        beta = float(np.mean([self.beta_for(t) for t in tasks]))
        if self.adaptation:
            if n != 1:
                raise InputError(f"adaptation mode takes exactly one task, got {n}")
            return self.lam / (self.lam + beta)
        return self.lam / (self.lam + n * beta)


def _stack(particles) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(particles, PriorParticle):
        particles = [particles]
    mu = np.stack([p.mu for p in particles])
    log_sigma = np.stack([p.log_sigma for p in particles])
    return mu, log_sigma


def log_z_batch(model, mu, log_sigma, task: Task, beta: float, eps) -> tuple[np.ndarray, np.ndarray]:
    """ln Z estimates for ``K`` particles on one task with frozen ``eps``.

    ``mu``, ``log_sigma`` are ``(K, P)`` and ``eps`` is ``(K, L, P)``.
    Returns ``values (K,)`` and gradients ``(K, 2P)`` ordered
    ``(d/d mu, d/d log_sigma)``.
    """
    if len(task) == 0:
        raise InputError("ln Z of an empty task is undefined")
    K, L, P = eps.shape
    # overflow surfaces as non-finite losses, reported below
    with np.errstate(over="ignore", invalid="ignore"):
        sigma = np.exp(log_sigma)
        thetas = mu[:, None, :] + sigma[:, None, :] * eps
        losses, g = model.loss_grad_batch(thetas.reshape(K * L, P), task.X, task.Y)
    losses = losses.reshape(K, L)
    g = g.reshape(K, L, P)
    bad = ~np.isfinite(losses)
    if bad.any():
        k = int(np.argwhere(bad)[0, 0])
        raise NumericError(f"non-finite loss for particle {k} on task of domain {task.domain_id}")

    a = -beta * losses
    a_max = a.max(axis=1, keepdims=True)
    s = np.exp(a - a_max)
    total = s.sum(axis=1, keepdims=True)
    values = a_max[:, 0] + np.log(total[:, 0]) - np.log(L)
    if np.any(values > _LOGZ_SLACK):
        raise NumericError(f"ln Z estimate {values.max()} exceeds 0 for nonnegative losses")

    w = (s / total)[:, :, None]
    d_mu = -beta * np.sum(w * g, axis=1)
    d_log_sigma = -beta * np.sum(w * g * eps, axis=1) * sigma
    return values, np.concatenate([d_mu, d_log_sigma], axis=1)


def log_z_tilde(model, phi: PriorParticle, task: Task, cfg: TemperatureConfig,
                rng: np.random.Generator | None = None, eps=None) -> tuple[float, np.ndarray]:
    """Monte-Carlo ln Z for one particle; pass ``eps`` (L, P) to freeze the draws."""
    if eps is None:
        eps = rng.standard_normal((cfg.mc_samples, len(phi)))
    eps = np.asarray(eps, dtype=float)
    values, grads = log_z_batch(model, phi.mu[None], phi.log_sigma[None], task,
                                cfg.beta_for(task), eps[None])
    return float(values[0]), grads[0]


def log_hyperposterior_batch(model, particles, tasks: Sequence[Task], cfg: TemperatureConfig,
                             hyper: HyperPrior, rng: np.random.Generator):
    """Unnormalized ln Q* and its gradient for every particle.

    Fresh ``eps`` of shape ``(K, L, P)`` is drawn per task in task order,
    so a fixed rng state reproduces the exact same estimate.
    """
    if len(tasks) == 0:
        raise InputError("hyper-posterior score needs at least one task")
    mu, log_sigma = _stack(particles)
    K, P = mu.shape
    weight = cfg.data_weight(tasks)

    stacked = np.concatenate([mu, log_sigma], axis=1)
    var = hyper.sigma_p**2
    values = -0.5 * np.sum(stacked**2, axis=1) / var - 0.5 * 2 * P * np.log(2.0 * np.pi * var)
    grads = -stacked / var
    for task in tasks:
        eps = rng.standard_normal((K, cfg.mc_samples, P))
        v, g = log_z_batch(model, mu, log_sigma, task, cfg.beta_for(task), eps)
        values = values + weight * v
        grads = grads + weight * g
    return values, grads


def log_hyperposterior(model, phi: PriorParticle, tasks, cfg, hyper, rng) -> tuple[float, np.ndarray]:
    values, grads = log_hyperposterior_batch(model, [phi], tasks, cfg, hyper, rng)
    return float(values[0]), grads[0]


def hyperposterior_score(model, phi: PriorParticle, tasks, cfg, hyper, rng) -> np.ndarray:
    return log_hyperposterior(model, phi, tasks, cfg, hyper, rng)[1]


def particle_scores(model, particles, tasks, cfg, hyper, rng) -> np.ndarray:
    """Scores ``(K, 2P)`` for a whole particle list, one shared draw per task."""
    return log_hyperposterior_batch(model, particles, tasks, cfg, hyper, rng)[1]


@dataclass(frozen=True)
class BoundTerms:
    emp_term: float
    kl_term: float
    kl_coef: float


def kl_coefficient(lam: float, n: int, beta: float) -> float:
    return 1.0 / lam + 1.0 / (n * beta)


def bound_terms(model, particles, tasks: Sequence[Task], cfg: TemperatureConfig,
                hyper: HyperPrior, rng: np.random.Generator) -> BoundTerms:
    """Empirical exponential-error and KL terms of the generalization bound.

    The KL term uses the mean closed-form KL from each particle Gaussian to
    the Gaussian at the hyper-prior mode (mu=0, log_sigma=0).  The bound's
    constant is not included.
    """
    particles = list(particles)
    if not particles or not tasks:
        raise InputError("bound terms need particles and tasks")
    mu, log_sigma = _stack(particles)
    K, P = mu.shape
    emp = 0.0
    for task in tasks:
        beta = cfg.beta_for(task)
        eps = rng.standard_normal((K, cfg.mc_samples, P))
        v, _ = log_z_batch(model, mu, log_sigma, task, beta, eps)
        emp -= float(np.mean(v)) / beta
    emp /= len(tasks)
    centre = PriorParticle(np.zeros(P), np.zeros(P))
    mean_kl = float(np.mean([gaussian_kl(p, centre) for p in particles]))
    beta_bar = float(np.mean([cfg.beta_for(t) for t in tasks]))
    coef = kl_coefficient(cfg.lam, len(tasks), beta_bar)
    return BoundTerms(emp, coef * mean_kl, coef)


__all__ = [
    "BoundTerms",
    "TemperatureConfig",
    "bound_terms",
    "kl_coefficient",
    "log_hyperposterior",
    "log_hyperposterior_batch",
    "log_z_batch",
    "log_z_tilde",
    "hyperposterior_score",
    "particle_scores",
]
