"""Obstacle avoidance in the (y, z) plane with a three-target point end effector.

The end effector moves at constant speed toward its current target.  It
switches from an intermediate target ``g_i`` to the next one as soon as it is
within the threshold ``p_i``; the check repeats within the same timestep, so a
second intermediate point close to the first is skipped.  Motion along each
leg is straight, which lets a whole leg be generated in one vectorised step.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..core import Bounds, EvalRecord

VARIATION_BOUNDS = Bounds((0.049, 0.09, 0.274), (0.331, 0.331, 0.311))
PARAM_BOUNDS = Bounds((0.0, 0.0, 0.0, 0.0, 0.01, 0.01), (0.6, 0.5, 0.6, 0.5, 0.3, 0.3))
VARIATION_NAMES = ("height", "width", "center_y")
PARAM_NAMES = ("g1_y", "g1_z", "g2_y", "g2_z", "p1", "p2")
METRICS = ("finish_time", "min_clearance", "success")
_SWITCH_SLACK = 1e-12  # m


@dataclass(frozen=True)
class ObstacleConstants:
    start_y: float = 0.05
    start_z: float = 0.05
    goal_y: float = 0.55
    goal_z: float = 0.05
    speed: float = 0.1  # m/s
    dt: float = 0.01  # s
    t_max: float = 12.0  # s
    goal_tol: float = 0.005  # m
    r_success: float = 1000.0
    r_goal: float = 1000.0
    r_time: float = 4000.0
    r_obs: float = 2000.0
    d_safe: float = 0.05  # m, clearance below which the penalty starts
    min_clearance: float = 0.04  # m, feasibility threshold


def rect_clearance(P: np.ndarray, v) -> np.ndarray:
    """Euclidean distance from points ``P`` (rows y, z) to the obstacle; 0 inside."""
    height, width, cy = v
    dy = np.maximum(np.abs(P[:, 0] - cy) - 0.5 * width, 0.0)
    dz = np.maximum(P[:, 1] - height, 0.0)  # the obstacle stands on z = 0
    dz = np.maximum(dz, np.maximum(-P[:, 1], 0.0))
    return np.hypot(dy, dz)


def rollout(v, theta, c: ObstacleConstants = ObstacleConstants()) -> dict:
    """Simulate one execution; returns the sampled path and summary values."""
    g1y, g1z, g2y, g2z, p1, p2 = theta
    goal = np.array([c.goal_y, c.goal_z])
    targets = [(np.array([g1y, g1z]), p1), (np.array([g2y, g2z]), p2), (goal, c.goal_tol)]
    step = c.speed * c.dt
    max_steps = int(round(c.t_max / c.dt))
    pos = np.array([c.start_y, c.start_z])
    legs = [pos[None, :]]
    steps = 0
    k = 0
    success = False
    while True:
        # advance the target index while the switching condition holds; the slack
        # absorbs rounding when a leg ends exactly on the threshold
        while k < 3 and np.linalg.norm(targets[k][0] - pos) <= targets[k][1] + _SWITCH_SLACK:
            k += 1
        if k == 3:
            success = True
            break
        if steps >= max_steps:
            break
        tgt, thr = targets[k]
        delta = tgt - pos
        dist = float(np.linalg.norm(delta))
        # steps until the distance drops to the threshold (never beyond the target)
        need = max(1, math.ceil((dist - thr) / step - 1e-12))
        n = min(need, max_steps - steps)
        u = delta / dist
        ks = np.arange(1, n + 1, dtype=float)[:, None] * step
        if n * step >= dist:
            ks = np.minimum(ks, dist)
        leg = pos + ks * u
        legs.append(leg)
        pos = leg[-1]
        steps += n
    path = np.concatenate(legs)
    return {"path": path, "steps": steps, "success": success}


def evaluate(v, theta, c: ObstacleConstants = ObstacleConstants()) -> EvalRecord:
    """Roll out policy ``theta`` on obstacle ``v`` = (height, width, center_y)."""
    v = tuple(float(a) for a in v)
    theta = tuple(float(a) for a in theta)
    out = rollout(v, theta, c)
    path, success = out["path"], out["success"]
    clear = rect_clearance(path, v)
    min_clear = float(clear.min())
    t_finish = out["steps"] * c.dt if success else c.t_max
    goal = np.array([c.goal_y, c.goal_z])
    d_init = math.hypot(c.goal_y - c.start_y, c.goal_z - c.start_z)
    d_final = float(np.linalg.norm(path[-1] - goal))
    # one penalty sample per timestep (positions after each move)
    pen = np.maximum(0.0, (c.d_safe - clear[1:]) / c.d_safe) ** 2
    reward = (c.r_success * success
              + c.r_goal * min(max(1.0 - d_final / d_init, 0.0), 1.0)
              + success * c.r_time * (c.t_max - t_finish) / c.t_max
              - c.r_obs * c.dt * float(pen.sum()))
    feasible = int(success and min_clear >= c.min_clearance)
    metrics = {"finish_time": t_finish, "min_clearance": min_clear, "success": float(success)}
    return EvalRecord("obstacle", v, theta, reward, feasible, metrics)
