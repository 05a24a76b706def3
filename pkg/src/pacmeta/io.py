"""On-disk formats: checkpoints, datasets, metrics CSV and key=value configs.

Checkpoint (JSON)::

    {"format_version": 1,
     "arch": {"input_dim": int, "hidden_dims": [int], "output_dim": 2},
     "particles": [{"mu": [float], "log_sigma": [float]}, ...],
     "temperature": {"beta": float | null, "lambda": float, "L": int},
     "seed": int, "step_count": int}

Dataset (JSON lines), one sample per line, grouped by ``task`` in order of
first appearance::

    {"task": int, "domain": int, "x": [float], "y": [float, float]}

Floats are written with ``repr``, the shortest string that parses back to
the identical double, so every round trip is exact.
"""

from __future__ import annotations

import csv
import io as _io
import json
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from pacmeta.errors import DataError
from pacmeta.net import Architecture, Task
from pacmeta.prob import PriorParticle
from pacmeta.svgd import ParticleSet

FORMAT_VERSION = 1

METRICS_HEADER = (
    "method",
    "rotation",
    "phase",
    "step",
    "mean_error_m",
    "std_error_m",
    "mean_uncertainty_m",
    "bound_emp_term",
    "bound_kl_term",
    "wall_ms",
)


@dataclass
class Checkpoint:
    arch: Architecture
    particles: ParticleSet
    lam: float
    beta: float | None = None
    L: int = 5
    seed: int = 0
    format_version: int = FORMAT_VERSION

    @property
    def step_count(self) -> int:
        return self.particles.step_count

    def __eq__(self, other):
        if not isinstance(other, Checkpoint):
            return NotImplemented
        return (
            self.arch == other.arch
            and self.particles == other.particles
            and (self.lam, self.beta, self.L, self.seed, self.format_version)
            == (other.lam, other.beta, other.L, other.seed, other.format_version)
        )

    def to_dict(self) -> dict:
        return {
            "format_version": self.format_version,
            "arch": self.arch.to_dict(),
            "particles": [
                {"mu": p.mu.tolist(), "log_sigma": p.log_sigma.tolist()} for p in self.particles
            ],
            "temperature": {"beta": self.beta, "lambda": self.lam, "L": self.L},
            "seed": int(self.seed),
            "step_count": int(self.step_count),
        }


def _require(d, key, kind, pointer):
    if not isinstance(d, dict) or key not in d:
        raise DataError(f"missing field at {pointer}/{key}")
    value = d[key]
    if kind is float and isinstance(value, int) and not isinstance(value, bool):
        value = float(value)
    if not isinstance(value, kind) or isinstance(value, bool) and kind is not bool:
        raise DataError(f"field {pointer}/{key} has type {type(value).__name__}, expected {kind.__name__}")
    return value


def _vector(d, key, n, pointer) -> np.ndarray:
    values = _require(d, key, list, pointer)
    if len(values) != n:
        raise DataError(f"{pointer}/{key} has length {len(values)}, architecture requires {n}")
    try:
        arr = np.array(values, dtype=float)
    except (TypeError, ValueError) as exc:
        raise DataError(f"{pointer}/{key} holds non-numeric entries") from exc
    if not np.all(np.isfinite(arr)):
        raise DataError(f"{pointer}/{key} holds non-finite entries")
    return arr


def checkpoint_from_dict(doc: dict) -> Checkpoint:
    version = _require(doc, "format_version", int, "")
    if version != FORMAT_VERSION:
        raise DataError(f"checkpoint format_version {version} is incompatible with {FORMAT_VERSION}")
    a = _require(doc, "arch", dict, "")
    try:
        arch = Architecture(
            _require(a, "input_dim", int, "/arch"),
            tuple(_require(a, "hidden_dims", list, "/arch")),
            _require(a, "output_dim", int, "/arch"),
        )
    except (TypeError, ValueError) as exc:
        raise DataError(f"/arch is invalid: {exc}") from exc
    raw = _require(doc, "particles", list, "")
    if not raw:
        raise DataError("/particles is empty")
    P = arch.param_count
    particles = tuple(
        PriorParticle(_vector(p, "mu", P, f"/particles/{i}"), _vector(p, "log_sigma", P, f"/particles/{i}"))
        for i, p in enumerate(raw)
    )
    t = _require(doc, "temperature", dict, "")
    beta = t.get("beta")
    if beta is not None:
        beta = _require(t, "beta", float, "/temperature")
    step_count = _require(doc, "step_count", int, "")
    return Checkpoint(
        arch=arch,
        particles=ParticleSet(particles, step_count),
        lam=_require(t, "lambda", float, "/temperature"),
        beta=beta,
        L=_require(t, "L", int, "/temperature"),
        seed=_require(doc, "seed", int, ""),
        format_version=version,
    )


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    Path(path).write_text(json.dumps(ckpt.to_dict(), allow_nan=False) + "\n")


def load_checkpoint(path) -> Checkpoint:
    text = Path(path).read_text()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: not valid JSON ({exc.msg} at line {exc.lineno} column {exc.colno})") from exc
    return checkpoint_from_dict(doc)


def write_dataset(path, tasks) -> None:
    with open(path, "w") as fh:
        for t, task in enumerate(tasks):
            for x, y in zip(task.X, task.Y):
                fh.write(json.dumps({"task": t, "domain": task.domain_id, "x": x.tolist(), "y": y.tolist()}))
                fh.write("\n")


def read_dataset(path) -> list[Task]:
    groups: dict[int, tuple[int, list, list]] = {}
    width = None
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                t, dom, x, y = int(rec["task"]), int(rec["domain"]), rec["x"], rec["y"]
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise DataError(f"{path}:{lineno}: malformed record ({exc})") from exc
            if width is None:
                width = len(x)
            if len(x) != width:
                raise DataError(f"{path}:{lineno}: feature length {len(x)} differs from {width}")
            if len(y) != 2:
                raise DataError(f"{path}:{lineno}: coordinates must have 2 entries")
            entry = groups.setdefault(t, (dom, [], []))
            if entry[0] != dom:
                raise DataError(f"{path}:{lineno}: task {t} mixes domains {entry[0]} and {dom}")
            entry[1].append(x)
            entry[2].append(y)
    return [Task(np.array(xs, dtype=float), np.array(ys, dtype=float), dom) for dom, xs, ys in groups.values()]


@dataclass
class MetricsRow:
    method: str
    rotation: int
    phase: str
    step: int
    mean_error_m: float
    std_error_m: float
    mean_uncertainty_m: float
    bound_emp_term: float = float("nan")
    bound_kl_term: float = float("nan")
    wall_ms: int = 0

    def values(self) -> list:
        return [repr(v) if isinstance(v, float) else v for v in asdict(self).values()]


assert tuple(f.name for f in fields(MetricsRow)) == METRICS_HEADER

_PHASE_ORDER = {"meta": 0, "finetune": 1}


def sort_rows(rows):
    """Order rows by (rotation, phase, step), keeping method order stable."""
    return sorted(rows, key=lambda r: (r.rotation, _PHASE_ORDER.get(r.phase, 2), r.step))


def metrics_csv(rows) -> str:
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(METRICS_HEADER)
    for r in sort_rows(rows):
        w.writerow(r.values())
    return buf.getvalue()


def write_metrics(path, rows) -> None:
    Path(path).write_text(metrics_csv(rows))


def read_metrics(path) -> list[MetricsRow]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != METRICS_HEADER:
            raise DataError(f"{path}: unexpected metrics header {reader.fieldnames}")
        return [
            MetricsRow(
                r["method"], int(r["rotation"]), r["phase"], int(r["step"]),
                float(r["mean_error_m"]), float(r["std_error_m"]), float(r["mean_uncertainty_m"]),
                float(r["bound_emp_term"]), float(r["bound_kl_term"]), int(r["wall_ms"]),
            )
            for r in reader
        ]


def read_config(path) -> dict[str, str]:
    """Parse ``key = value`` lines; ``#`` starts a comment. Keys use underscores."""
    out = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise DataError(f"{path}:{lineno}: expected key=value, got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise DataError(f"{path}:{lineno}: empty key")
        out[key.replace("-", "_")] = value
    return out


def write_config(path, values: dict) -> None:
    lines = [f"{k} = {'' if v is None else v}" for k, v in sorted(values.items())]
    Path(path).write_text("\n".join(lines) + "\n")
