"""Synthetic indoor RF environments and localization tasks.

Each fingerprint bin is a received level above the noise floor in dB:

    level = P_tx - noise_floor - PL(d) + ripple + shadowing

with log-distance path loss ``PL(d) = PL0 + 10 gamma log10(d / d0)``.
The ripple is the magnitude response of a few specular reflections off
domain-specific virtual reflectors, evaluated across ``bins_per_anchor``
frequency bins, so it varies with position and from one environment
("day") to the next.  Shadowing has two parts: a per-environment,
per-anchor offset fixed by ``domain_seed`` and a per-measurement draw from
the caller's rng.

Environments in a suite share room, anchors and path-loss exponent and
differ only through ``domain_seed``.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from pacmeta.errors import InputError
from pacmeta.net import Task

D0 = 0.1
PL0_DB = 20.0
TX_POWER_DBM = 20.0
NOISE_FLOOR_DBM = -100.0
SPEED_OF_LIGHT = 3e8
BIN_SPACING_HZ = 3.125e6

DEFAULT_ROOM = (10.0, 8.0)
DEFAULT_ANCHORS = ((0.5, 0.5), (9.5, 0.5), (9.5, 7.5), (0.5, 7.5))


@dataclass(frozen=True)
class EnvironmentSpec:
    room: tuple[float, float] = DEFAULT_ROOM
    anchors: tuple[tuple[float, float], ...] = DEFAULT_ANCHORS
    path_loss_exponent: float = 2.5
    shadowing_sigma_db: float = 2.0
    n_multipath: int = 2
    bins_per_anchor: int = 6
    domain_seed: int = 0
    los: bool = True
    reflection_gain: float = 0.35
    domain_offset_db: float = 2.0

    def __post_init__(self):
        room = tuple(float(v) for v in self.room)
        anchors = tuple((float(a), float(b)) for a, b in self.anchors)
        object.__setattr__(self, "room", room)
        object.__setattr__(self, "anchors", anchors)
        if not self.path_loss_exponent > 0:
            raise InputError("path loss exponent must be positive")
        if not anchors:
            raise InputError("at least one anchor is required")
        for a in anchors:
            if not (0 <= a[0] <= room[0] and 0 <= a[1] <= room[1]):
                raise InputError(f"anchor {a} lies outside the room {room}")

    @property
    def feature_dim(self) -> int:
        return len(self.anchors) * self.bins_per_anchor

    def to_dict(self) -> dict:
        d = asdict(self)
        d["room"] = list(self.room)
        d["anchors"] = [list(a) for a in self.anchors]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "EnvironmentSpec":
        d = dict(d)
        d["room"] = tuple(d["room"])
        d["anchors"] = tuple(tuple(a) for a in d["anchors"])
        return cls(**d)


@dataclass(frozen=True)
class _DomainRealization:
    reflectors: np.ndarray  # (anchors, n_multipath, 2)
    gains: np.ndarray  # (anchors, n_multipath)
    phases: np.ndarray  # (anchors, n_multipath)
    offsets_db: np.ndarray  # (anchors,)


def _realize(env: EnvironmentSpec) -> _DomainRealization:
    rng = np.random.default_rng(np.random.SeedSequence([int(env.domain_seed), 0xD0]))
    A, R = len(env.anchors), env.n_multipath
    w, h = env.room
    # reflectors scattered around the room, including just outside the walls
    reflectors = rng.uniform([-0.2 * w, -0.2 * h], [1.2 * w, 1.2 * h], size=(A, R, 2))
    gains = env.reflection_gain * rng.uniform(0.5, 1.0, size=(A, R))
    phases = rng.uniform(0.0, 2.0 * np.pi, size=(A, R))
    offsets = rng.normal(0.0, env.domain_offset_db, size=A)
    return _DomainRealization(reflectors, gains, phases, offsets)


_REALIZATIONS: dict = {}


def _realization(env: EnvironmentSpec) -> _DomainRealization:
    key = (env.domain_seed, env.room, env.anchors, env.n_multipath, env.reflection_gain, env.domain_offset_db)
    if key not in _REALIZATIONS:
        _REALIZATIONS[key] = _realize(env)
    return _REALIZATIONS[key]


def _check_positions(env, pos):
    w, h = env.room
    outside = (pos[:, 0] < 0) | (pos[:, 0] > w) | (pos[:, 1] < 0) | (pos[:, 1] > h)
    if outside.any():
        raise InputError(f"position {pos[np.argmax(outside)].tolist()} lies outside the room {env.room}")


def fingerprints(env: EnvironmentSpec, positions, rng: np.random.Generator | None) -> np.ndarray:
    """Fingerprints for ``positions`` (m, 2); returns ``(m, feature_dim)``.

    ``rng=None`` switches per-measurement shadowing off.
    """
    pos = np.atleast_2d(np.asarray(positions, dtype=float))
    _check_positions(env, pos)
    anchors = np.asarray(env.anchors)
    A, B, m = len(anchors), env.bins_per_anchor, pos.shape[0]

    d = np.linalg.norm(pos[:, None, :] - anchors[None, :, :], axis=-1)
    d = np.maximum(d, D0)
    level = TX_POWER_DBM - NOISE_FLOOR_DBM - (PL0_DB + 10.0 * env.path_loss_exponent * np.log10(d / D0))
    level = np.repeat(level[:, :, None], B, axis=2)

    if env.n_multipath > 0:
        real = _realization(env)
        # excess delay of anchor -> reflector -> position over the direct path
        via = (
            np.linalg.norm(real.reflectors[None] - anchors[None, :, None, :], axis=-1)
            + np.linalg.norm(real.reflectors[None] - pos[:, None, None, :], axis=-1)
        )
        tau = np.maximum(via - d[:, :, None], 0.0) / SPEED_OF_LIGHT  # (m, A, R)
        freqs = (np.arange(B) - (B - 1) / 2.0) * BIN_SPACING_HZ
        phase = 2.0 * np.pi * tau[..., None] * freqs + real.phases[None, :, :, None]
        h = 1.0 + np.sum(real.gains[None, :, :, None] * np.exp(-1j * phase), axis=2)
        level = level + 20.0 * np.log10(np.maximum(np.abs(h), 1e-3))
    if env.domain_offset_db > 0:
        level = level + _realization(env).offsets_db[None, :, None]
    if rng is not None and env.shadowing_sigma_db > 0:
        level = level + rng.normal(0.0, env.shadowing_sigma_db, size=(m, A, 1))
    return level.reshape(m, A * B)


def gen_fingerprint(env: EnvironmentSpec, pos, rng: np.random.Generator | None) -> np.ndarray:
    return fingerprints(env, np.asarray(pos, dtype=float)[None], rng)[0]


def sample_positions(env: EnvironmentSpec, m: int, rng: np.random.Generator) -> np.ndarray:
    w, h = env.room
    return rng.uniform([0.0, 0.0], [w, h], size=(m, 2))


def sample_task(env: EnvironmentSpec, m: int, rng: np.random.Generator, domain_id: int | None = None) -> Task:
    """``m`` uniform positions with raw (unnormalized) fingerprints."""
    if m < 1:
        raise InputError(f"task size must be >= 1, got {m}")
    pos = sample_positions(env, m, rng)
    X = fingerprints(env, pos, rng)
    return Task(X, pos, env.domain_seed if domain_id is None else domain_id)


def los_environment(domain_seed: int, **overrides) -> EnvironmentSpec:
    return EnvironmentSpec(domain_seed=domain_seed, los=True, **overrides)


def nlos_environment(domain_seed: int, **overrides) -> EnvironmentSpec:
    params = dict(
        path_loss_exponent=3.2,
        shadowing_sigma_db=4.0,
        n_multipath=4,
        reflection_gain=0.6,
        domain_offset_db=3.0,
    )
    params.update(overrides)
    return EnvironmentSpec(domain_seed=domain_seed, los=False, **params)


@dataclass
class Suite:
    """Environments plus the feature standardization shared by all of them."""

    environments: list[EnvironmentSpec]
    mean: np.ndarray = field(default=None)
    std: np.ndarray = field(default=None)

    def __post_init__(self):
        if not self.environments:
            raise InputError("a suite needs at least one environment")
        dims = {e.feature_dim for e in self.environments}
        if len(dims) != 1:
            raise InputError("all environments in a suite must share the feature length")
        if self.mean is not None:
            self.mean = np.asarray(self.mean, dtype=float)
            self.std = np.asarray(self.std, dtype=float)

    def __len__(self):
        return len(self.environments)

    def __eq__(self, other):
        return (
            isinstance(other, Suite)
            and self.environments == other.environments
            and np.array_equal(self.mean, other.mean)
            and np.array_equal(self.std, other.std)
        )

    @property
    def feature_dim(self) -> int:
        return self.environments[0].feature_dim

    def fit_normalization(self, indices=None, n_per_env: int = 2000, seed: int = 0) -> None:
        """Standardize with statistics of fingerprints from the given environments."""
        idx = range(len(self)) if indices is None else indices
        rows = []
        for i in idx:
            rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x5A, int(i)]))
            rows.append(sample_task(self.environments[i], n_per_env, rng).X)
        X = np.concatenate(rows)
        self.mean = X.mean(axis=0)
        self.std = np.maximum(X.std(axis=0), 1e-12)

    def normalize(self, task: Task) -> Task:
        if self.mean is None:
            return task
        return Task((task.X - self.mean) / self.std, task.Y, task.domain_id)

    def sample_task(self, env_index: int, m: int, rng: np.random.Generator) -> Task:
        """Normalized task from environment ``env_index``; the domain id is the index."""
        return self.normalize(sample_task(self.environments[env_index], m, rng, domain_id=env_index))

    def to_dict(self) -> dict:
        return {
            "environments": [e.to_dict() for e in self.environments],
            "normalization": {
                "mean": None if self.mean is None else self.mean.tolist(),
                "std": None if self.std is None else self.std.tolist(),
            },
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Suite":
        norm = d.get("normalization") or {}
        return cls(
            [EnvironmentSpec.from_dict(e) for e in d["environments"]],
            None if norm.get("mean") is None else np.asarray(norm["mean"], dtype=float),
            None if norm.get("std") is None else np.asarray(norm["std"], dtype=float),
        )


def make_suite(d_train: int, seeds=None, los: bool = True, normalize: bool = True, **overrides) -> Suite:
    """``d_train`` environments sharing geometry, one per domain seed."""
    if d_train < 1:
        raise InputError(f"need at least one environment, got {d_train}")
    if seeds is None:
        seeds = range(d_train)
    seeds = list(seeds)
    if len(seeds) != d_train:
        raise InputError(f"got {len(seeds)} seeds for {d_train} environments")
    factory = los_environment if los else nlos_environment
    suite = Suite([factory(int(s), **overrides) for s in seeds])
    if normalize:
        suite.fit_normalization()
    return suite
