"""Task registry: bounds, samplers, evaluators and feasibility thresholds."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Callable

import numpy as np

from ..core import TASKS, Bounds, EvalRecord, TaskVariation, lhs_sample
from . import obstacle, push

PROFILES = ("sim", "real_profile")


@dataclass(frozen=True)
class TaskSpec:
    name: str
    var_bounds: Bounds
    theta_bounds: Bounds
    var_names: tuple
    theta_names: tuple
    metrics: tuple
    report_metrics: tuple  # metric columns shown in the summary tables
    constants: object

    @property
    def m(self) -> int:
        return self.var_bounds.dim

    @property
    def n(self) -> int:
        return self.theta_bounds.dim


_SPECS = {
    "obstacle": TaskSpec("obstacle", obstacle.VARIATION_BOUNDS, obstacle.PARAM_BOUNDS,
                         obstacle.VARIATION_NAMES, obstacle.PARAM_NAMES, obstacle.METRICS,
                         ("reward", "finish_time"), obstacle.ObstacleConstants()),
    "push": TaskSpec("push", push.VARIATION_BOUNDS, push.PARAM_BOUNDS, push.VARIATION_NAMES,
                     push.PARAM_NAMES, push.METRICS, ("pos_error", "ori_error"),
                     push.PushConstants()),
}


def get_task(task: str, constants=None) -> TaskSpec:
    """Look up a task; ``constants`` overrides the default constants table."""
    if task not in _SPECS:
        raise ValueError(f"unknown task {task!r}; expected one of {TASKS}")
    spec = _SPECS[task]
    if constants is not None:
        spec = dataclasses.replace(spec, constants=constants)
    return spec


def feasibility_threshold(task: str, environment: str = "sim", constants=None) -> dict:
    """Thresholds of the feasibility predicate for ``task`` under a profile.

    The real_profile only relaxes the push position threshold; the physics
    are the same as in sim.
    """
    if environment not in PROFILES:
        raise ValueError(f"unknown profile {environment!r}")
    c = get_task(task, constants).constants
    if task == "push":
        pos = c.pos_tol if environment == "sim" else c.pos_tol_real
        return {"pos_error": pos, "ori_error": c.ori_tol}
    return {"min_clearance": c.min_clearance, "success": 1.0}


def sample_variations(task: str, n: int, seed: int, constants=None) -> list:
    """``n`` variations: LHS for obstacle, uniform circle/triangle for push."""
    if n < 1:
        raise ValueError("n must be >= 1")
    spec = get_task(task, constants)
    if task == "obstacle":
        pts = lhs_sample(n, spec.var_bounds, seed)
    else:
        rng = np.random.default_rng(seed)
        pts = np.hstack([push.sample_start(rng, n, spec.constants),
                         push.sample_goal(rng, n, spec.constants)])
        # sampled points may sit on the bounding box edge; guard rounding
        pts = np.clip(pts, spec.var_bounds.lo, spec.var_bounds.hi)
    return [TaskVariation(task, tuple(float(a) for a in p)) for p in pts]


def make_evaluator(task: str, profile: str = "sim", constants=None) -> Callable:
    """Return ``f(v, theta) -> EvalRecord`` for a task and feasibility profile."""
    if profile not in PROFILES:
        raise ValueError(f"unknown profile {profile!r}")
    spec = get_task(task, constants)
    c = spec.constants
    if task == "obstacle":
        return lambda v, theta: obstacle.evaluate(v, theta, c)
    pos_tol = c.pos_tol if profile == "sim" else c.pos_tol_real
    return lambda v, theta: push.evaluate(v, theta, c, pos_tol=pos_tol)


def evaluate(task: str, v, theta, profile: str = "sim", constants=None) -> EvalRecord:
    return make_evaluator(task, profile, constants)(v, theta)


__all__ = ["TaskSpec", "PROFILES", "get_task", "feasibility_threshold", "sample_variations",
           "make_evaluator", "evaluate", "obstacle", "push"]
