"""Bayesian optimisation with expected improvement, used to learn one variation.

The GP works on the unit cube of the policy bounds.  EI is computed in the
GP's standardised reward units so the exploration offset ``xi`` is scale free.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.linalg import solve_triangular
from scipy.special import ndtr

from .core import Bounds, EvalRecord, denormalize, lhs_sample
from .gp import GPModel, gp_condition, gp_fit, kernel_matrix
from .optimize import OptimizationError, OptimizerOptions, run_starts

log = logging.getLogger(__name__)

_INV_SQRT_2PI = 0.3989422804014327
ACQ_OPTS = OptimizerOptions(max_iters=30, grad_tol=1e-6, ftol=1e-9)


@dataclass(frozen=True)
class BOConfig:
    n_init: int = 20
    t_max: int = 120
    refit_every: int = 10
    acq_samples: int = 512
    acq_refine: int = 8
    seed: int = 0
    xi: float = 0.01  # EI offset in standardised reward units

    def __post_init__(self):
        if min(self.n_init, self.t_max, self.refit_every, self.acq_samples, self.acq_refine) < 1:
            raise ValueError("all BO counts must be >= 1")
        if self.n_init > self.t_max:
            raise ValueError("n_init must not exceed t_max")
        if self.xi < 0:
            raise ValueError("xi must be >= 0")


def expected_improvement(mean, variance, best):
    """EI for maximisation; works elementwise on arrays.

    ``EI = (mean - best) Phi(z) + sigma phi(z)`` with ``z = (mean - best) / sigma``,
    and ``max(0, mean - best)`` where the variance is zero.
    """
    mean = np.asarray(mean, dtype=float)
    variance = np.asarray(variance, dtype=float)
    if np.any(variance < 0):
        raise ValueError("variance must be non-negative")
    imp = mean - best
    sigma = np.sqrt(variance)
    pos = sigma > 0
    z = np.where(pos, imp / np.where(pos, sigma, 1.0), 0.0)
    ei = np.where(pos, imp * ndtr(z) + sigma * _INV_SQRT_2PI * np.exp(-0.5 * z * z),
                  np.maximum(imp, 0.0))
    ei = np.maximum(ei, 0.0)
    return float(ei) if ei.ndim == 0 else ei


def _std_predict(model: GPModel, Z):
    """Standardised-unit mean and variance at rows of ``Z``."""
    K = kernel_matrix(Z, model.X, model.lengthscale, model.signal_var)
    mean = K @ model.alpha
    W = solve_triangular(model.chol, K.T, lower=True, check_finite=False)
    var = np.maximum(model.signal_var - np.einsum("ij,ij->j", W, W), 0.0)
    return mean, var


def _ei_and_grad(model: GPModel, z, best):
    k = kernel_matrix(z[None, :], model.X, model.lengthscale, model.signal_var)[0]
    dk = k[:, None] * ((model.X - z) / model.lengthscale ** 2)
    mean = float(k @ model.alpha)
    dmean = model.alpha @ dk
    w = solve_triangular(model.chol, k, lower=True, check_finite=False)
    var = model.signal_var - float(w @ w)
    imp = mean - best
    if var <= 1e-300:
        return max(imp, 0.0), (dmean if imp > 0 else np.zeros_like(dmean))
    u = solve_triangular(model.chol, w, lower=True, trans="T", check_finite=False)
    dvar = -2.0 * (u @ dk)
    sigma = np.sqrt(var)
    t = imp / sigma
    cdf, pdf = float(ndtr(t)), _INV_SQRT_2PI * np.exp(-0.5 * t * t)
    ei = imp * cdf + sigma * pdf
    return ei, cdf * dmean + pdf * dvar / (2.0 * sigma)


def propose(model: GPModel, best: float, cfg: BOConfig, rng) -> np.ndarray:
    """Maximise EI on the unit cube: random probes, then L-BFGS from the best few."""
    d = model.X.shape[1]
    probes = rng.random((cfg.acq_samples, d))
    mean, var = _std_predict(model, probes)
    ei = expected_improvement(mean, var, best)
    order = np.argsort(-ei, kind="stable")[: cfg.acq_refine]
    cand, cand_ei = probes[order[0]], float(ei[order[0]])
    unit = Bounds.unit(d)
    results = run_starts(lambda z: _ei_and_grad(model, z, best), None, unit,
                         [probes[i] for i in order], ACQ_OPTS, maximize=True)
    for r in results:
        if r is not None and r.f_star > cand_ei:
            cand, cand_ei = r.x_star, r.f_star
    return np.clip(cand, 0.0, 1.0)


def bo_learn(objective: Callable, theta_bounds: Bounds, cfg: BOConfig = BOConfig()):
    """Run BO for ``cfg.t_max`` evaluations of ``objective(theta) -> EvalRecord``.

    Returns ``(history, (theta_best, reward_best))``; ties in reward go to the
    earliest evaluation.
    """
    rng = np.random.default_rng(cfg.seed)
    init_seed, gp_seed = rng.integers(2**63, size=2)
    history: list[EvalRecord] = []
    Z = []
    for z in lhs_sample(cfg.n_init, Bounds.unit(theta_bounds.dim), init_seed):
        Z.append(z)
        history.append(objective(_to_theta(z, theta_bounds)))
    hypers = None
    gp_rng = np.random.default_rng(gp_seed)
    for t in range(cfg.n_init, cfg.t_max):
        X = np.array(Z)
        y = np.array([r.reward for r in history])
        if hypers is None or (t - cfg.n_init) % cfg.refit_every == 0:
            model = gp_fit(X, y, seed=int(gp_rng.integers(2**63)))
            hypers = (model.lengthscale, model.signal_var, model.noise_var)
        else:
            model = gp_condition(X, y, *hypers)
        best_std = (float(y.max()) - model.y_mean) / model.y_scale + cfg.xi
        try:
            z = propose(model, best_std, cfg, rng)
        except OptimizationError as exc:
            log.warning("acquisition failed at t=%d: %s", t, exc)
            z = rng.random(theta_bounds.dim)
        Z.append(z)
        history.append(objective(_to_theta(z, theta_bounds)))
    rewards = np.array([r.reward for r in history])
    i = int(np.argmax(rewards))
    return history, (history[i].theta, history[i].reward)


def _to_theta(z, bounds: Bounds) -> tuple:
    return tuple(float(a) for a in np.clip(denormalize(z, bounds), bounds.lo, bounds.hi))
