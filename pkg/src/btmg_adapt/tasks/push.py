"""Quasi-static planar push of a right-triangular object with an offset centre of mass.

The pusher travels in a straight line from ``P_s`` to ``P_g``.  Once it meets
the object boundary the object translates with it; a push line that misses the
centre of mass by a signed lever ``delta`` adds a lateral drift and a rotation
proportional to ``delta`` and the pushed distance.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..core import Bounds, EvalRecord

# start in a circle, goal in a triangle: the variation box is their bounding box
VARIATION_BOUNDS = Bounds((-0.23, -0.08, 0.10, -0.15), (-0.07, 0.08, 0.30, 0.15))
PARAM_BOUNDS = Bounds((-0.08, -0.08, -0.20, -0.20), (0.08, 0.08, 0.20, 0.20))
VARIATION_NAMES = ("s_x", "s_y", "g_x", "g_y")
PARAM_NAMES = ("o_sx", "o_sy", "o_gx", "o_gy")
METRICS = ("pos_error", "ori_error", "contact")


@dataclass(frozen=True)
class PushConstants:
    start_center: tuple = (-0.15, 0.0)
    start_radius: float = 0.08
    goal_triangle: tuple = ((0.10, -0.15), (0.10, 0.15), (0.30, 0.0))
    # object frame: right angle at A, legs along +x (0.3 m) and +y (0.15 m)
    vertices: tuple = ((0.0, 0.0), (0.3, 0.0), (0.0, 0.15))
    com_offset: tuple = (0.05, 0.02)  # from the footprint centroid
    backoff: float = 0.25  # m, approach distance behind the start
    drift: float = 2.0  # 1/m, lateral drift per unit lever and distance
    spin: float = 40.0  # rad/m^2, rotation per unit lever and distance
    max_lever: float = 0.05  # m, beyond this the pusher slides off
    pos_weight: float = 10.0
    reward_scale: float = 100.0
    pos_scale: float = 0.02  # m
    ori_scale: float = 0.2  # rad
    pos_tol: float = 0.011  # m
    pos_tol_real: float = 0.015  # m, relaxed threshold of the real_profile evaluation
    ori_tol: float = math.pi / 6  # rad

    @property
    def centroid(self) -> np.ndarray:
        return np.mean(np.array(self.vertices), axis=0)

    def footprint(self, s) -> np.ndarray:
        """World vertices with the centroid at ``s`` and zero orientation."""
        V = np.array(self.vertices)
        return V - self.centroid + np.asarray(s, dtype=float)


def _left(u):
    return np.array([-u[1], u[0]])


def _unit(w):
    n = math.hypot(w[0], w[1])
    if n == 0.0:
        raise ValueError("zero-length direction")
    return w / n


def point_in_triangle(p, T) -> bool:
    """Closed-set membership for a counter-clockwise or clockwise triangle."""
    p = np.asarray(p, dtype=float)
    signs = []
    for i in range(3):
        a, b = T[i], T[(i + 1) % 3]
        signs.append((b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0]))
    return min(signs) >= 0 or max(signs) <= 0


def segment_entry(p0, p1, T):
    """Parameter ``t`` in [0, 1] where segment p0->p1 first enters convex polygon ``T``.

    Cyrus-Beck clipping against the polygon's edge half-planes; returns
    ``None`` when the segment does not meet the polygon.
    """
    T = np.asarray(T, dtype=float)
    centroid = T.mean(axis=0)
    d = p1 - p0
    t_in, t_out = 0.0, 1.0
    for i in range(len(T)):
        a, b = T[i], T[(i + 1) % len(T)]
        e = b - a
        n = np.array([e[1], -e[0]])
        if n @ (centroid - a) > 0:
            n = -n  # outward normal
        num = n @ (p0 - a)
        den = n @ d
        if den == 0.0:
            if num > 0:
                return None
            continue
        t = -num / den
        if den < 0:
            t_in = max(t_in, t)
        else:
            t_out = min(t_out, t)
        if t_in > t_out:
            return None
    return t_in


def simulate(v, theta, c: PushConstants = PushConstants()) -> dict:
    s = np.array(v[:2], dtype=float)
    g = np.array(v[2:], dtype=float)
    o_s = np.array(theta[:2], dtype=float)
    o_g = np.array(theta[2:], dtype=float)
    u0 = _unit(g - s)
    P_s = s + o_s - c.backoff * u0
    P_g = g + o_g
    T = c.footprint(s)
    com = s + np.array(c.com_offset)
    miss = {"final": s, "psi": 0.0, "contact": False, "lever": float("nan")}
    if point_in_triangle(P_s, T) or not np.any(P_g - P_s):
        return miss
    u = _unit(P_g - P_s)
    lever = float(_left(u) @ (com - P_s))
    t = segment_entry(P_s, P_g, T)
    if t is None or abs(lever) > c.max_lever:
        return dict(miss, lever=lever)
    seg = float(np.linalg.norm(P_g - P_s))
    d_eff = max(0.0, seg - t * seg)
    final = s + u * d_eff - _left(u) * (c.drift * lever * d_eff)
    psi = -c.spin * lever * d_eff
    return {"final": final, "psi": psi, "contact": True, "lever": lever}


def evaluate(v, theta, c: PushConstants = PushConstants(), pos_tol=None) -> EvalRecord:
    """Push from ``v[:2]`` toward goal ``v[2:]`` with offsets ``theta``."""
    v = tuple(float(a) for a in v)
    theta = tuple(float(a) for a in theta)
    out = simulate(v, theta, c)
    pos_err = float(np.linalg.norm(out["final"] - np.array(v[2:])))
    ori_err = abs(out["psi"])
    reward = (c.pos_weight * c.reward_scale * math.exp(-pos_err / c.pos_scale)
              + c.reward_scale * math.exp(-ori_err / c.ori_scale))
    tol = c.pos_tol if pos_tol is None else pos_tol
    feasible = int(pos_err < tol and ori_err < c.ori_tol)
    metrics = {"pos_error": pos_err, "ori_error": ori_err, "contact": float(out["contact"])}
    return EvalRecord("push", v, theta, reward, feasible, metrics)


def sample_start(rng, n, c: PushConstants = PushConstants()) -> np.ndarray:
    r = c.start_radius * np.sqrt(rng.random(n))
    phi = 2.0 * math.pi * rng.random(n)
    return np.array(c.start_center) + np.stack([r * np.cos(phi), r * np.sin(phi)], axis=1)


def sample_goal(rng, n, c: PushConstants = PushConstants()) -> np.ndarray:
    a, b = rng.random(n), rng.random(n)
    fold = a + b > 1.0
    a, b = np.where(fold, 1.0 - a, a), np.where(fold, 1.0 - b, b)
    V0, V1, V2 = (np.array(p) for p in c.goal_triangle)
    return V0 + a[:, None] * (V1 - V0) + b[:, None] * (V2 - V0)


def compensating_params(v, c: PushConstants = PushConstants()) -> np.ndarray:
    """Offsets that push exactly through the centre of mass and stop on the goal.

    ``b`` is the distance from the centre of mass back along the push
    direction to the object boundary (ray cast against the footprint edges).
    """
    s, g = np.array(v[:2], dtype=float), np.array(v[2:], dtype=float)
    u0 = _unit(g - s)
    com = s + np.array(c.com_offset)
    b = ray_exit_distance(com, -u0, c.footprint(s))
    off = np.array(c.com_offset)
    return np.concatenate([off, off - u0 * b])


def ray_exit_distance(origin, direction, T) -> float:
    """Distance from an interior ``origin`` along ``direction`` to the polygon boundary."""
    best = math.inf
    for i in range(len(T)):
        a, e = T[i], T[(i + 1) % len(T)] - T[i]
        M = np.array([[direction[0], -e[0]], [direction[1], -e[1]]])
        det = np.linalg.det(M)
        if abs(det) < 1e-15:
            continue
        t, w = np.linalg.solve(M, a - origin)
        if t >= 0 and -1e-12 <= w <= 1 + 1e-12:
            best = min(best, t)
    return best
