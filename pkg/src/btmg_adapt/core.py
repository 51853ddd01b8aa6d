"""Shared domain types, bounded spaces, Latin hypercube sampling and record files."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

TASKS = ("obstacle", "push")


@dataclass(frozen=True)
class Bounds:
    """Axis-aligned box. Values are stored as tuples so instances stay hashable."""

    lower: tuple
    upper: tuple

    def __post_init__(self):
        lo = tuple(float(v) for v in self.lower)
        hi = tuple(float(v) for v in self.upper)
        if len(lo) != len(hi):
            raise ValueError(f"bounds length mismatch: {len(lo)} vs {len(hi)}")
        if not lo:
            raise ValueError("bounds must have at least one dimension")
        for i, (a, b) in enumerate(zip(lo, hi)):
            if not (math.isfinite(a) and math.isfinite(b)):
                raise ValueError(f"non-finite bound in dimension {i}")
            if not a < b:
                raise ValueError(f"degenerate bounds in dimension {i}: [{a}, {b}]")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def dim(self) -> int:
        return len(self.lower)

    @property
    def lo(self) -> np.ndarray:
        return np.array(self.lower)

    @property
    def hi(self) -> np.ndarray:
        return np.array(self.upper)

    @property
    def width(self) -> np.ndarray:
        return self.hi - self.lo

    def contains(self, x, tol: float = 1e-12) -> bool:
        x = np.asarray(x, dtype=float)
        return bool(np.all(x >= self.lo - tol) and np.all(x <= self.hi + tol))

    def clip(self, x) -> np.ndarray:
        return np.minimum(np.maximum(np.asarray(x, dtype=float), self.lo), self.hi)

    @classmethod
    def unit(cls, dim: int) -> "Bounds":
        return cls((0.0,) * dim, (1.0,) * dim)


def _as_vector(x, bounds: Bounds) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != bounds.dim:
        raise ValueError(f"expected {bounds.dim} components, got {x.shape[-1]}")
    return x


def normalize(x, bounds: Bounds) -> np.ndarray:
    """Map ``x`` affinely so that ``lower -> 0`` and ``upper -> 1``.

    Points outside the box are mapped outside the unit cube rather than
    rejected; callers that need membership use :meth:`Bounds.contains`.
    Works on a single vector or on rows of a matrix.
    """
    x = _as_vector(x, bounds)
    return (x - bounds.lo) / bounds.width


def denormalize(z, bounds: Bounds) -> np.ndarray:
    z = _as_vector(z, bounds)
    return bounds.lo + z * bounds.width


def lhs_sample(n: int, bounds: Bounds, seed) -> np.ndarray:
    """Latin hypercube design of ``n`` points inside ``bounds``.

    Each dimension is cut into ``n`` equal strata; every stratum receives
    exactly one point, placed uniformly at random inside it.
    """
    if n < 1:
        raise ValueError("lhs_sample needs n >= 1")
    rng = np.random.default_rng(seed)
    d = bounds.dim
    strata = np.stack([rng.permutation(n) for _ in range(d)], axis=1)
    # keep offsets off the stratum edges so the mapped value cannot round
    # into the neighbouring stratum
    u = np.clip(rng.random((n, d)), 1e-9, 1.0 - 1e-9)
    return denormalize((strata + u) / n, bounds)


@dataclass(frozen=True)
class TaskVariation:
    task_id: str
    v: tuple

    def __post_init__(self):
        if self.task_id not in TASKS:
            raise ValueError(f"unknown task {self.task_id!r}")
        object.__setattr__(self, "v", tuple(float(a) for a in self.v))

    @property
    def array(self) -> np.ndarray:
        return np.array(self.v)


@dataclass(frozen=True)
class PolicyParams:
    theta_e: tuple

    def __post_init__(self):
        object.__setattr__(self, "theta_e", tuple(float(a) for a in self.theta_e))

    @property
    def array(self) -> np.ndarray:
        return np.array(self.theta_e)


@dataclass(frozen=True)
class EvalRecord:
    """One simulator rollout."""

    task_id: str
    v: tuple
    theta: tuple
    reward: float
    feasible: int
    metrics: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "v", tuple(float(a) for a in self.v))
        object.__setattr__(self, "theta", tuple(float(a) for a in self.theta))
        object.__setattr__(self, "reward", float(self.reward))
        if self.feasible not in (0, 1):
            raise ValueError(f"feasible must be 0 or 1, got {self.feasible!r}")
        object.__setattr__(self, "feasible", int(self.feasible))
        object.__setattr__(self, "metrics", {k: float(v) for k, v in self.metrics.items()})


@dataclass(frozen=True)
class TrainingData:
    """Best policy per training variation plus every evaluation made while learning."""

    best: tuple  # ((v, theta_star), ...)
    history: tuple  # (EvalRecord, ...)

    @classmethod
    def from_histories(cls, histories: Iterable[Sequence[EvalRecord]]) -> "TrainingData":
        best, history = [], []
        for hist in histories:
            hist = list(hist)
            if not hist:
                continue
            i = int(np.argmax([r.reward for r in hist]))
            best.append((hist[i].v, hist[i].theta))
            history.extend(hist)
        return cls(tuple(best), tuple(history))

    def best_arrays(self) -> tuple:
        V = np.array([b[0] for b in self.best], dtype=float)
        T = np.array([b[1] for b in self.best], dtype=float)
        return V, T


# ---------------------------------------------------------------------------
# record files
# ---------------------------------------------------------------------------

class RecordFormatError(ValueError):
    def __init__(self, path, line: int, msg: str):
        super().__init__(f"{path}:{line}: {msg}")
        self.line = line


def format_real(x: float) -> str:
    return format(float(x), ".17g")


def record_header(m: int, n: int, metric_names: Sequence[str]) -> list:
    return (["task_id"] + [f"v_{i}" for i in range(m)] + [f"theta_{i}" for i in range(n)]
            + ["reward", "feasible"] + list(metric_names))


def write_records(path, records: Sequence[EvalRecord], layout=None) -> None:
    """Write records as CSV. ``layout`` = (M, N, metric names) for empty lists."""
    records = list(records)
    if records:
        r0 = records[0]
        layout = (len(r0.v), len(r0.theta), tuple(r0.metrics))
    elif layout is None:
        layout = (0, 0, ())
    m, n, names = layout
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(record_header(m, n, names))
        for r in records:
            if len(r.v) != m or len(r.theta) != n or tuple(r.metrics) != tuple(names):
                raise ValueError("records in one file must share a layout")
            w.writerow([r.task_id] + [format_real(a) for a in r.v] + [format_real(a) for a in r.theta]
                       + [format_real(r.reward), str(r.feasible)]
                       + [format_real(r.metrics[k]) for k in names])


def read_records(path) -> list:
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise RecordFormatError(path, 1, "missing header")
    header = rows[0]
    try:
        m = sum(1 for h in header if h.startswith("v_"))
        n = sum(1 for h in header if h.startswith("theta_"))
        expected = record_header(m, n, [])
        if header[: len(expected)] != expected:
            raise ValueError
    except ValueError:
        raise RecordFormatError(path, 1, f"bad header {header!r}") from None
    names = header[len(expected):]
    out = []
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != len(header):
            raise RecordFormatError(path, lineno, f"expected {len(header)} fields, got {len(row)}")
        try:
            vals = [float(a) for a in row[1:1 + m + n + 1]]
            feasible = int(row[1 + m + n + 1])
            metrics = {k: float(a) for k, a in zip(names, row[2 + m + n + 1:])}
            out.append(EvalRecord(row[0], vals[:m], vals[m:m + n], vals[-1], feasible, metrics))
        except ValueError as exc:
            raise RecordFormatError(path, lineno, str(exc)) from None
    return out


def records_roundtrip(records: Sequence[EvalRecord], path) -> list:
    write_records(path, records)
    return read_records(path)


def write_variations(path, variations: Sequence[TaskVariation]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    m = len(variations[0].v) if variations else 0
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["task_id"] + [f"v_{i}" for i in range(m)])
        for var in variations:
            w.writerow([var.task_id] + [format_real(a) for a in var.v])


def read_variations(path) -> list:
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows or not rows[0] or rows[0][0] != "task_id":
        raise RecordFormatError(path, 1, "bad variation header")
    out = []
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != len(rows[0]):
            raise RecordFormatError(path, lineno, "wrong number of fields")
        try:
            out.append(TaskVariation(row[0], [float(a) for a in row[1:]]))
        except ValueError as exc:
            raise RecordFormatError(path, lineno, str(exc)) from None
    return out
