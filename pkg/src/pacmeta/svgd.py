"""Stein variational gradient descent over stacked prior particles."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from pacmeta.errors import InputError, NumericError
from pacmeta.prob import PriorParticle

H2_FLOOR = 1e-8


@dataclass(frozen=True)
class ParticleSet:
    particles: tuple[PriorParticle, ...]
    step_count: int = 0

    def __post_init__(self):
        particles = tuple(self.particles)
        if not particles:
            raise InputError("a particle set needs at least one particle")
        if len({len(p) for p in particles}) != 1:
            raise InputError("all particles must share one parameter length")
        object.__setattr__(self, "particles", particles)

    def __len__(self):
        return len(self.particles)

    def __iter__(self):
        return iter(self.particles)

    def __getitem__(self, i):
        return self.particles[i]

    @property
    def matrix(self) -> np.ndarray:
        """Stacked particle vectors, shape ``(K, 2P)``."""
        return np.stack([p.vector for p in self.particles])

    @classmethod
    def from_matrix(cls, phis, step_count: int = 0) -> "ParticleSet":
        return cls(tuple(PriorParticle.from_vector(v) for v in np.asarray(phis, dtype=float)), step_count)


def median_bandwidth(phis: np.ndarray) -> float:
    """``h^2 = median(pairwise sq. distances) / (2 ln(K + 1))``, floored."""
    K = phis.shape[0]
    if K < 2:
        return H2_FLOOR
    sq = _sq_dists(phis)
    iu = np.triu_indices(K, k=1)
    h2 = np.median(sq[iu]) / (2.0 * np.log(K + 1))
    return max(float(h2), H2_FLOOR)


def _sq_dists(phis):
    diffs = phis[:, None, :] - phis[None, :, :]
    return np.einsum("ijd,ijd->ij", diffs, diffs)


def rbf_kernel(phis, h2: float | None = None) -> tuple[np.ndarray, np.ndarray]:
    """RBF kernel matrix and gradients w.r.t. the first argument.

    Returns ``k (K, K)`` with ``k[i, j] = exp(-|a_i - a_j|^2 / (2 h^2))`` and
    ``grad (K, K, D)`` with ``grad[i, j] = d k(a_i, a_j) / d a_i``.
    """
    phis = np.atleast_2d(np.asarray(phis, dtype=float))
    if h2 is None:
        h2 = median_bandwidth(phis)
    diffs = phis[:, None, :] - phis[None, :, :]
    k = np.exp(-np.einsum("ijd,ijd->ij", diffs, diffs) / (2.0 * h2))
    grad = -diffs / h2 * k[:, :, None]
    return k, grad


def svgd_direction(phis, scores, h2: float | None = None) -> np.ndarray:
    """``(1/K) sum_j [k(phi_j, phi_k) score_j + grad_{phi_j} k(phi_j, phi_k)]`` per particle."""
    phis = np.asarray(phis, dtype=float)
    scores = np.asarray(scores, dtype=float)
    if scores.shape != phis.shape:
        raise InputError(f"scores {scores.shape} do not match particles {phis.shape}")
    k, grad = rbf_kernel(phis, h2)
    K = phis.shape[0]
    # k is symmetric; grad[j, k] is the gradient in the j-th argument
    return (k.T @ scores + grad.sum(axis=0)) / K


def svgd_step(pset: ParticleSet, scores, eta: float) -> ParticleSet:
    if not eta > 0:
        raise InputError(f"step size must be positive, got {eta}")
    phis = pset.matrix
    scores = np.asarray(scores, dtype=float)
    if scores.shape[0] != len(pset):
        raise InputError(f"got {scores.shape[0]} scores for {len(pset)} particles")
    new = phis + eta * svgd_direction(phis, scores)
    bad = ~np.all(np.isfinite(new), axis=1)
    if bad.any():
        raise NumericError(f"non-finite SVGD update for particle {int(np.flatnonzero(bad)[0])}")
    return ParticleSet.from_matrix(new, pset.step_count + 1)
