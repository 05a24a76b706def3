"""Diagonal Gaussian priors over network weights and their hyper-prior."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from pacmeta.errors import InputError

DEFAULT_SIGMA_P = 0.5


@dataclass(frozen=True)
class PriorParticle:
    """``N(mu, diag(exp(log_sigma)**2))`` over a flat parameter vector."""

    mu: np.ndarray
    log_sigma: np.ndarray

    def __post_init__(self):
        mu = np.asarray(self.mu, dtype=float)
        log_sigma = np.asarray(self.log_sigma, dtype=float)
        if mu.ndim != 1 or mu.shape != log_sigma.shape:
            raise InputError(f"mu {mu.shape} and log_sigma {log_sigma.shape} must be equal-length vectors")
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "log_sigma", log_sigma)

    def __len__(self):
        return self.mu.shape[0]

    def __eq__(self, other):
        if not isinstance(other, PriorParticle):
            return NotImplemented
        return np.array_equal(self.mu, other.mu) and np.array_equal(self.log_sigma, other.log_sigma)

    __hash__ = None

    @property
    def vector(self) -> np.ndarray:
        """Stacked ``(mu, log_sigma)``, the coordinates SVGD moves."""
        return np.concatenate([self.mu, self.log_sigma])

    @classmethod
    def from_vector(cls, v) -> "PriorParticle":
        v = np.asarray(v, dtype=float)
        if v.ndim != 1 or v.shape[0] % 2:
            raise InputError("stacked particle vector must have even length")
        half = v.shape[0] // 2
        return cls(v[:half].copy(), v[half:].copy())


@dataclass(frozen=True)
class HyperPrior:
    """Zero-centred spherical Gaussian over stacked particle coordinates."""

    sigma_p: float = DEFAULT_SIGMA_P

    def __post_init__(self):
        if not self.sigma_p > 0:
            raise InputError(f"sigma_p must be positive, got {self.sigma_p}")


def sample_particle(hyper: HyperPrior, n_params: int, rng: np.random.Generator) -> PriorParticle:
    z = rng.normal(0.0, hyper.sigma_p, size=2 * n_params)
    return PriorParticle(z[:n_params], z[n_params:])


def sample_theta(phi: PriorParticle, eps) -> np.ndarray:
    """Reparameterized draw ``mu + exp(log_sigma) * eps``.

    ``eps`` may carry leading batch dimensions.
    """
    eps = np.asarray(eps, dtype=float)
    if eps.shape[-1] != len(phi):
        raise InputError(f"eps has length {eps.shape[-1]}, particle has {len(phi)}")
    return phi.mu + np.exp(phi.log_sigma) * eps


def hyperprior_log_density_grad(phi: PriorParticle, hyper: HyperPrior) -> tuple[float, np.ndarray]:
    v = phi.vector
    var = hyper.sigma_p**2
    log_density = -0.5 * float(v @ v) / var - 0.5 * v.size * np.log(2.0 * np.pi * var)
    return log_density, -v / var


def gaussian_kl(q: PriorParticle, p: PriorParticle) -> float:
    """KL(q || p) between two diagonal Gaussians."""
    if len(q) != len(p):
        raise InputError(f"particle lengths differ: {len(q)} vs {len(p)}")
    log_ratio = p.log_sigma - q.log_sigma
    var_ratio = np.exp(-2.0 * log_ratio)
    mahal = (q.mu - p.mu) ** 2 * np.exp(-2.0 * p.log_sigma)
    kl = 0.5 * np.sum(var_ratio + mahal - 1.0) + np.sum(log_ratio)
    return max(float(kl), 0.0)


def spawn(rng_seed: int, *path: int) -> np.random.Generator:
    """Independent generator for a sub-stream keyed by integer ``path``.

    Counter-based splitting: the same (seed, path) always yields the same
    stream regardless of how many other streams were drawn.
    """
    return np.random.default_rng(np.random.SeedSequence([int(rng_seed) & (2**64 - 1), *map(int, path)]))
