"""Reward/feasibility model over (variation, policy) pairs and its query step.

A GP predicts the reward and a class-weighted SVM predicts feasibility, both on
the concatenation of the normalised variation and the normalised policy
parameters.  Querying maximises ``r_hat - (1 - f) * mu`` over the policy box,
where ``f`` is the sigmoid-smoothed SVM margin during optimisation and the hard
label for the final pick.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .core import Bounds, TrainingData, lhs_sample, normalize
from .gp import GPModel, gp_fit, gp_from_text, gp_mean, gp_mean_and_grad, gp_to_text
from .optimize import OptimizationError, OptimizerOptions, OptResult, run_starts
from .svm import (DEFAULT_C, SVMModel, svm_classify, svm_fit, svm_from_text, svm_soft,
                  svm_to_text)

log = logging.getLogger(__name__)

MU_FACTOR = 0.25
N_QUERY_STARTS = 16
N_NEIGHBOR_STARTS = 3
QUERY_OPTS = OptimizerOptions(max_iters=100, grad_tol=1e-6, ftol=1e-10)


@dataclass
class PerfModel:
    j_hat: GPModel
    f_hat: SVMModel
    mu: float
    var_bounds: Bounds
    theta_bounds: Bounds
    r_min: float
    r_max: float
    task_id: str = ""
    # normalised v and raw theta* of the training variations (neighbour starts)
    best_v: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))
    best_theta: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))
    flags: dict = field(default_factory=dict)

    def joint(self, v, theta) -> np.ndarray:
        return np.concatenate([normalize(v, self.var_bounds), normalize(theta, self.theta_bounds)])


@dataclass(frozen=True)
class QueryResult:
    theta_hat: tuple
    predicted_reward: float
    predicted_feasible: int
    surrogate_value: float
    n_starts_used: int
    fallback_flag: bool
    extrapolated: bool = False


def penalty_from_range(r_min: float, r_max: float, factor: float = MU_FACTOR) -> float:
    span = r_max - r_min
    if span > 0:
        return factor * span
    # a constant reward history still needs a positive penalty
    return factor * max(abs(r_max), 1.0)


def train_perf(data: TrainingData, seed=0, var_bounds: Optional[Bounds] = None,
               theta_bounds: Optional[Bounds] = None, C: float = DEFAULT_C, gamma=None,
               max_points: int = 2000, mu_factor: float = MU_FACTOR) -> PerfModel:
    """Fit the reward GP and feasibility SVM on every record in ``data.history``.

    Bounds default to the registered task's bounds.
    """
    if not data.history:
        raise ValueError("training history is empty")
    task_id = data.history[0].task_id
    if var_bounds is None or theta_bounds is None:
        from .tasks import get_task
        spec = get_task(task_id)
        var_bounds = var_bounds or spec.var_bounds
        theta_bounds = theta_bounds or spec.theta_bounds
    V = np.array([r.v for r in data.history], dtype=float)
    T = np.array([r.theta for r in data.history], dtype=float)
    Z = np.hstack([normalize(V, var_bounds), normalize(T, theta_bounds)])
    y = np.array([r.reward for r in data.history])
    labels = np.array([r.feasible for r in data.history])
    gp_seed, svm_seed = np.random.SeedSequence(seed).generate_state(2)
    j_hat = gp_fit(Z, y, seed=int(gp_seed), max_points=max_points)
    f_hat = svm_fit(Z, labels, C=C, gamma=gamma, seed=int(svm_seed))
    r_min, r_max = float(y.min()), float(y.max())
    bv, bt = data.best_arrays()
    bv = normalize(bv, var_bounds) if bv.size else np.zeros((0, var_bounds.dim))
    flags = {"constant_classifier": bool(f_hat.constant)}
    if f_hat.constant:
        log.warning("only one feasibility class in history; classifier is constant")
    return PerfModel(j_hat, f_hat, penalty_from_range(r_min, r_max, mu_factor), var_bounds,
                     theta_bounds, r_min, r_max, task_id, bv, bt.reshape(len(bv), -1), flags)


def surrogate_reward(model: PerfModel, v, theta, mode: str = "hard"):
    """``(value, gradient)``; the gradient is w.r.t. raw ``theta`` in soft mode, else None."""
    x = model.joint(v, theta)
    if mode == "hard":
        r = gp_mean(model.j_hat, x)
        f = svm_classify(model.f_hat, x)
        return r - (1 - f) * model.mu, None
    if mode != "soft":
        raise ValueError(f"unknown mode {mode!r}")
    val, g = _soft_joint(model, x)
    m = model.var_bounds.dim
    return val, g[m:] / model.theta_bounds.width


def _soft_joint(model: PerfModel, x):
    r, dr = gp_mean_and_grad(model.j_hat, x)
    p, dp = svm_soft(model.f_hat, x)
    return r - (1.0 - p) * model.mu, dr + model.mu * dp


def neighbor_indices(best_v: np.ndarray, zv: np.ndarray, k: int) -> np.ndarray:
    """Indices of the ``k`` nearest rows of ``best_v``; ties to the lower index."""
    if best_v.shape[0] == 0:
        return np.zeros(0, dtype=int)
    d = np.sqrt(np.sum((best_v - zv) ** 2, axis=1))
    return np.argsort(d, kind="stable")[:k]


def query(model: PerfModel, v_p, data: Optional[TrainingData] = None,
          n_starts: int = N_QUERY_STARTS, seed=0,
          opts: OptimizerOptions = QUERY_OPTS) -> QueryResult:
    """Pick policy parameters for variation ``v_p``.

    The soft surrogate is maximised from ``n_starts`` LHS points and the best
    parameters of the three nearest training variations.  Endpoints whose soft
    value is below the best start value are discarded; of the rest, the one
    with the highest predicted reward among those the SVM labels feasible is
    returned (ties to the lowest start index).  If none is labelled feasible
    the endpoint with the highest soft value is returned with ``fallback_flag``.
    """
    v_p = np.asarray(v_p, dtype=float)
    zv = normalize(v_p, model.var_bounds)
    extrapolated = bool(np.any(zv < -1e-12) or np.any(zv > 1 + 1e-12))
    if extrapolated:
        log.warning("query variation %s lies outside the training bounds", v_p.tolist())
    if data is not None:
        bv, bt = data.best_arrays()
        bv = normalize(bv, model.var_bounds) if bv.size else np.zeros((0, zv.size))
    else:
        bv, bt = model.best_v, model.best_theta
    n = model.theta_bounds.dim
    unit = Bounds.unit(n)
    starts = list(lhs_sample(n_starts, unit, seed)) if n_starts >= 1 else []
    for i in neighbor_indices(bv, zv, N_NEIGHBOR_STARTS):
        starts.append(np.clip(normalize(bt[i], model.theta_bounds), 0.0, 1.0))
    if not starts:
        raise ValueError("need at least one start point")

    def soft(u):
        val, g = _soft_joint(model, np.concatenate([zv, u]))
        return val, g[zv.size:]

    start_soft = [soft(s)[0] for s in starts]
    floor = max(start_soft)
    results = run_starts(soft, None, unit, starts, opts, maximize=True)
    ok = [(i, r) for i, r in enumerate(results) if r is not None]
    if not ok:
        raise OptimizationError("all query starts failed")
    # every remaining endpoint is at least as good as any start on the soft surrogate
    pool = [(i, r) for i, r in ok if r.f_star >= floor]
    if not pool:  # cannot happen for a monotone optimiser; keep the best start instead
        i0 = int(np.argmax(start_soft))
        pool = [(i0, OptResult(np.asarray(starts[i0]), float(start_soft[i0]), 0, False))]
    best, best_r = None, -np.inf
    for i, r in pool:
        x = np.concatenate([zv, r.x_star])
        if svm_classify(model.f_hat, x) == 1:
            rh = gp_mean(model.j_hat, x)
            if rh > best_r:
                best, best_r = r, rh
    fallback = best is None
    if fallback:
        best = max(pool, key=lambda ir: (ir[1].f_star, -ir[0]))[1]
    x = np.concatenate([zv, best.x_star])
    theta = model.theta_bounds.lo + best.x_star * model.theta_bounds.width
    theta = np.clip(theta, model.theta_bounds.lo, model.theta_bounds.hi)
    return QueryResult(tuple(float(a) for a in theta), gp_mean(model.j_hat, x),
                       svm_classify(model.f_hat, x), float(best.f_star), len(starts), fallback,
                       extrapolated)


# ---------------------------------------------------------------------------
# model bundle
# ---------------------------------------------------------------------------

def save_bundle(model: PerfModel, directory) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    (d / "gp.model").write_text(gp_to_text(model.j_hat) + "\n", encoding="utf-8")
    (d / "svm.model").write_text(svm_to_text(model.f_hat) + "\n", encoding="utf-8")
    meta = {
        "kind": "perf",
        "task_id": model.task_id,
        "mu": model.mu,
        "r_min": model.r_min,
        "r_max": model.r_max,
        "var_bounds": [list(model.var_bounds.lower), list(model.var_bounds.upper)],
        "theta_bounds": [list(model.theta_bounds.lower), list(model.theta_bounds.upper)],
        "best_v": model.best_v.tolist(),
        "best_theta": model.best_theta.tolist(),
        "flags": model.flags,
    }
    (d / "meta").write_text(json.dumps(meta, indent=1) + "\n", encoding="utf-8")


def load_bundle(directory) -> PerfModel:
    d = Path(directory)
    meta = json.loads((d / "meta").read_text(encoding="utf-8"))
    if meta.get("kind") != "perf":
        raise ValueError(f"{d} is not a PerF model bundle")
    j_hat = gp_from_text((d / "gp.model").read_text(encoding="utf-8"))
    f_hat = svm_from_text((d / "svm.model").read_text(encoding="utf-8"))
    vb, tb = Bounds(*meta["var_bounds"]), Bounds(*meta["theta_bounds"])
    bv = np.array(meta["best_v"], dtype=float).reshape(-1, vb.dim)
    bt = np.array(meta["best_theta"], dtype=float).reshape(-1, tb.dim)
    return PerfModel(j_hat, f_hat, meta["mu"], vb, tb, meta["r_min"], meta["r_max"],
                     meta["task_id"], bv, bt, meta.get("flags", {}))
