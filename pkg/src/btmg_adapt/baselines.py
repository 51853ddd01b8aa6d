"""Comparison methods: per-variation learning, direct regression, nearest neighbour, single policy."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from .bayesopt import BOConfig, bo_learn
from .core import Bounds, normalize
from .gp import gp_condition, gp_fit, gp_from_text, gp_mean, gp_to_text


def baseline_learned(objective: Callable, theta_bounds: Bounds, cfg: BOConfig = BOConfig()):
    """Learn the test variation from scratch; returns ``(theta, record, history)``."""
    history, _ = bo_learn(objective, theta_bounds, cfg)
    i = int(np.argmax([r.reward for r in history]))
    return history[i].theta, history[i], history


@dataclass
class DirectModel:
    gps: list  # one GPModel per policy dimension
    var_bounds: Bounds
    theta_bounds: Bounds


def _pairs(best_pairs: Sequence) -> tuple:
    V = np.array([p[0] for p in best_pairs], dtype=float)
    T = np.array([p[1] for p in best_pairs], dtype=float)
    return V, T


def train_direct(best_pairs: Sequence, var_bounds: Bounds, theta_bounds: Bounds, seed=0,
                 hypers: Optional[tuple] = None) -> DirectModel:
    """One GP per policy component mapping normalised ``v`` to ``theta*_j``.

    ``hypers`` = (lengthscale, signal_var, noise_var) skips the likelihood fit.
    """
    if len(best_pairs) < 2:
        raise ValueError("direct model needs at least two (v, theta*) pairs")
    V, T = _pairs(best_pairs)
    Z = normalize(V, var_bounds)
    seeds = np.random.SeedSequence(seed).generate_state(T.shape[1])
    gps = []
    for j in range(T.shape[1]):
        if hypers is None:
            gps.append(gp_fit(Z, T[:, j], seed=int(seeds[j])))
        else:
            gps.append(gp_condition(Z, T[:, j], *hypers))
    return DirectModel(gps, var_bounds, theta_bounds)


def query_direct(model: DirectModel, v_p) -> tuple:
    z = normalize(v_p, model.var_bounds)
    theta = np.array([gp_mean(g, z) for g in model.gps])
    return tuple(float(a) for a in model.theta_bounds.clip(theta))


def _normalized_best(best_pairs: Sequence, var_bounds: Bounds):
    if not best_pairs:
        raise ValueError("training set is empty")
    V, T = _pairs(best_pairs)
    return normalize(V, var_bounds), T


def nearest_index(best_pairs: Sequence, v_p, var_bounds: Bounds) -> int:
    Z, _ = _normalized_best(best_pairs, var_bounds)
    d = np.sqrt(np.sum((Z - normalize(v_p, var_bounds)) ** 2, axis=1))
    return int(np.argmin(d))  # first minimum: lowest index on ties


def nearest_neighbor(best_pairs: Sequence, v_p, var_bounds: Bounds) -> tuple:
    """theta* of the training variation closest to ``v_p`` in normalised space."""
    i = nearest_index(best_pairs, v_p, var_bounds)
    return tuple(best_pairs[i][1])


def medoid_index(best_pairs: Sequence, var_bounds: Bounds) -> int:
    Z, _ = _normalized_best(best_pairs, var_bounds)
    D = np.sqrt(np.maximum(np.sum((Z[:, None, :] - Z[None, :, :]) ** 2, axis=2), 0.0))
    return int(np.argmin(D.sum(axis=1)))


def single_policy(best_pairs: Sequence, var_bounds: Bounds) -> tuple:
    """theta* of the medoid training variation, used for every test variation."""
    return tuple(best_pairs[medoid_index(best_pairs, var_bounds)][1])


def save_direct(model: DirectModel, directory) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    for j, g in enumerate(model.gps):
        (d / f"gp_{j}.model").write_text(gp_to_text(g) + "\n", encoding="utf-8")
    meta = {"kind": "direct", "n_outputs": len(model.gps),
            "var_bounds": [list(model.var_bounds.lower), list(model.var_bounds.upper)],
            "theta_bounds": [list(model.theta_bounds.lower), list(model.theta_bounds.upper)]}
    (d / "meta").write_text(json.dumps(meta, indent=1) + "\n", encoding="utf-8")


def load_direct(directory) -> DirectModel:
    d = Path(directory)
    meta = json.loads((d / "meta").read_text(encoding="utf-8"))
    if meta.get("kind") != "direct":
        raise ValueError(f"{d} is not a direct-model bundle")
    gps = [gp_from_text((d / f"gp_{j}.model").read_text(encoding="utf-8"))
           for j in range(meta["n_outputs"])]
    return DirectModel(gps, Bounds(*meta["var_bounds"]), Bounds(*meta["theta_bounds"]))
