"""Exact Gaussian-process regression with an isotropic RBF kernel.

Inputs are expected on the unit cube; targets are standardised internally.
Hyperparameters (length-scale, signal variance, noise variance) are fitted by
maximising the log marginal likelihood from several Latin-hypercube starts.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.linalg import cho_solve, lapack, solve_triangular

from .core import Bounds, lhs_sample
from .optimize import OptimizationError, OptimizerOptions, lbfgs_min

log = logging.getLogger(__name__)

NOISE_FLOOR = 1e-8
DEFAULT_HYPERS = (0.3, 1.0, 1e-6)
# search box in log space: length-scale, signal variance, noise variance
LOG_HYPER_BOUNDS = Bounds(
    (math.log(0.03), math.log(0.1), math.log(NOISE_FLOOR)),
    (math.log(3.0), math.log(10.0), math.log(1.0)),
)
N_HYPER_STARTS = 8
HYPER_OPTS = OptimizerOptions(max_iters=50, grad_tol=1e-5, ftol=1e-8, secant=False)
MAX_POINTS = 2000
_KERNEL_CUT = 46.0

_LOG_2PI = math.log(2.0 * math.pi)


class GPError(RuntimeError):
    pass


def rbf_kernel(x, x2, lengthscale: float, signal_var: float) -> float:
    if lengthscale <= 0 or signal_var <= 0:
        raise ValueError("length-scale and signal variance must be positive")
    x, x2 = np.asarray(x, dtype=float), np.asarray(x2, dtype=float)
    if x.shape != x2.shape:
        raise ValueError("kernel inputs must have equal length")
    d2 = float(np.sum((x - x2) ** 2))
    return signal_var * math.exp(-d2 / (2.0 * lengthscale ** 2))


def sq_dists(A, B) -> np.ndarray:
    A, B = np.atleast_2d(A), np.atleast_2d(B)
    d = (A * A).sum(1)[:, None] + (B * B).sum(1)[None, :] - 2.0 * A @ B.T
    return np.maximum(d, 0.0)


def _rbf_from_sq(D, inv_two_ell2: float) -> np.ndarray:
    # entries below e^-46 (~1e-20) are set to exactly zero; otherwise fill-in
    # during factorisation produces subnormal numbers, which slow LAPACK ~10x
    E = D * (-inv_two_ell2)
    K = np.exp(E)
    K[E < -_KERNEL_CUT] = 0.0
    return K


def kernel_matrix(A, B, lengthscale: float, signal_var: float) -> np.ndarray:
    return signal_var * _rbf_from_sq(sq_dists(A, B), 0.5 / lengthscale ** 2)


def _flush_tiny(L):
    L[np.abs(L) < 1e-280] = 0.0
    return L


def jittered_cholesky(K: np.ndarray) -> np.ndarray:
    """Lower Cholesky factor; on failure retry with growing diagonal jitter."""
    L, info = lapack.dpotrf(K, lower=1, clean=1)
    if info == 0:
        return _flush_tiny(L)
    n = K.shape[0]
    jitter = 1e-10 * float(np.trace(K)) / n
    for _ in range(6):
        L, info = lapack.dpotrf(K + jitter * np.eye(n), lower=1, clean=1)
        if info == 0:
            return _flush_tiny(L)
        jitter *= 2.0
    raise GPError("Cholesky factorisation failed after jitter retries")


def log_marginal_likelihood(lengthscale, signal_var, noise_var, X, y) -> float:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float)
    if X.shape[0] != y.shape[0] or y.shape[0] < 1:
        raise ValueError("X rows must match y length (>= 1)")
    K = kernel_matrix(X, X, lengthscale, signal_var)
    K[np.diag_indices_from(K)] += noise_var
    L = jittered_cholesky(K)
    a = cho_solve((L, True), y, check_finite=False)
    return float(-0.5 * y @ a - np.log(np.diag(L)).sum() - 0.5 * len(y) * _LOG_2PI)


def _neg_lml_and_grad(log_h, D, y):
    """Negative LML and its gradient in (log l, log sf2, log sn2)."""
    ell2 = math.exp(2.0 * log_h[0])
    sf2, sn2 = math.exp(log_h[1]), math.exp(log_h[2])
    n = len(y)
    Kf = _rbf_from_sq(D, 0.5 / ell2)
    Kf *= sf2
    K = Kf.copy()
    K[np.diag_indices(n)] += sn2
    L = jittered_cholesky(K)
    del K
    a = cho_solve((L, True), y, check_finite=False)
    lml = -0.5 * y @ a - np.log(np.diag(L)).sum() - 0.5 * n * _LOG_2PI
    # dpotri fills only the lower triangle; the strict upper part stays zero
    Kinv, info = lapack.dpotri(L, lower=1, overwrite_c=1)
    if info != 0:
        raise GPError("inverse from Cholesky factor failed")
    dinv = np.diag(Kinv).copy()

    def tr_inv(M, mdiag):
        # trace(K^-1 M) for symmetric M using the lower triangle only
        return 2.0 * np.vdot(Kinv, M) - dinv @ mdiag

    KfD = Kf * D
    Ka = Kf @ a
    g_sf = 0.5 * (a @ Ka - tr_inv(Kf, np.full(n, sf2)))
    g_ell = 0.5 * (a @ (KfD @ a) - tr_inv(KfD, np.zeros(n))) / ell2
    g_sn = 0.5 * sn2 * (a @ a - dinv.sum())
    return -lml, -np.array([g_ell, g_sf, g_sn])


@dataclass
class GPModel:
    X: np.ndarray
    y_std: np.ndarray
    lengthscale: float
    signal_var: float
    noise_var: float
    chol: np.ndarray
    alpha: np.ndarray
    y_mean: float
    y_scale: float
    fit_info: dict = field(default_factory=dict, repr=False)
    clamped: int = 0

    @property
    def dim(self) -> int:
        return self.X.shape[1]

    @property
    def n(self) -> int:
        return self.X.shape[0]

    def lml(self) -> float:
        return float(-0.5 * self.y_std @ self.alpha - np.log(np.diag(self.chol)).sum()
                     - 0.5 * self.n * _LOG_2PI)


def _standardize(y):
    y_mean = float(np.mean(y))
    y_scale = float(np.std(y))
    if not y_scale > 0.0:
        y_scale = 1.0
    return (y - y_mean) / y_scale, y_mean, y_scale


def _condition_std(X, y_s, lengthscale, signal_var, noise_var, y_mean, y_scale, fit_info=None):
    if lengthscale <= 0 or signal_var <= 0:
        raise ValueError("hyperparameters must be positive")
    noise_var = max(float(noise_var), NOISE_FLOOR)
    K = kernel_matrix(X, X, lengthscale, signal_var)
    K[np.diag_indices_from(K)] += noise_var
    L = jittered_cholesky(K)
    alpha = cho_solve((L, True), y_s, check_finite=False)
    return GPModel(X, y_s, float(lengthscale), float(signal_var), noise_var, L, alpha,
                   float(y_mean), float(y_scale), fit_info or {})


def gp_condition(X, y, lengthscale, signal_var, noise_var, fit_info=None) -> GPModel:
    """Posterior for fixed hyperparameters; ``y`` is standardised first."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float).ravel()
    if X.shape[0] != y.shape[0]:
        raise ValueError("X rows must match y length")
    y_s, y_mean, y_scale = _standardize(y)
    return _condition_std(X, y_s, lengthscale, signal_var, noise_var, y_mean, y_scale, fit_info)


def subsample_indices(n: int, cap: int, seed) -> np.ndarray:
    if n <= cap:
        return np.arange(n)
    rng = np.random.default_rng(seed)
    return np.sort(rng.choice(n, size=cap, replace=False))


def gp_fit(X, y, seed=0, max_points: int = MAX_POINTS, n_starts: int = N_HYPER_STARTS,
           opts: Optional[OptimizerOptions] = None) -> GPModel:
    """Fit hyperparameters by multistart LML maximisation and condition on the data.

    Training sets larger than ``max_points`` are subsampled uniformly (seeded).
    A single point gets the default hyperparameters without fitting.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float).ravel()
    if X.shape[0] != y.shape[0] or y.shape[0] < 1:
        raise ValueError("need matching X rows and y length >= 1")
    rng = np.random.default_rng(seed)
    idx = subsample_indices(len(y), max_points, rng.integers(2**63))
    X, y = X[idx], y[idx]
    y_s, y_mean, y_scale = _standardize(y)
    if len(y) == 1:
        return _condition_std(X, y_s, *DEFAULT_HYPERS, y_mean, y_scale)

    D = sq_dists(X, X)
    starts = lhs_sample(n_starts, LOG_HYPER_BOUNDS, rng.integers(2**63))
    fun = lambda h: _neg_lml_and_grad(h, D, y_s)
    start_lml, results = [], []
    for s in starts:
        start_lml.append(-fun(s)[0])
        try:
            results.append(lbfgs_min(fun, None, s, LOG_HYPER_BOUNDS, opts or HYPER_OPTS))
        except (OptimizationError, GPError) as exc:
            log.warning("hyperparameter start failed: %s", exc)
            results.append(None)
    ok = [r for r in results if r is not None]
    if not ok:
        raise GPError("all hyperparameter starts failed")
    best = min(ok, key=lambda r: r.f_star)
    ell, sf2, sn2 = np.exp(best.x_star)
    info = {"start_points": starts.tolist(), "start_lml": start_lml, "lml": -best.f_star,
            "n_used": len(y)}
    return _condition_std(X, y_s, ell, sf2, sn2, y_mean, y_scale, info)


def gp_predict(model: GPModel, x) -> tuple:
    """Posterior mean and variance (in raw target units) at one point."""
    m, v = gp_predict_many(model, np.atleast_2d(x))
    return float(m[0]), float(v[0])


def gp_predict_many(model: GPModel, Xq) -> tuple:
    Xq = np.atleast_2d(np.asarray(Xq, dtype=float))
    Ks = kernel_matrix(Xq, model.X, model.lengthscale, model.signal_var)
    mean = Ks @ model.alpha
    V = solve_triangular(model.chol, Ks.T, lower=True, check_finite=False)
    var = model.signal_var - np.sum(V * V, axis=0)
    neg = var < 0.0
    if np.any(neg):
        model.clamped += int(neg.sum())
        var = np.where(neg, 0.0, var)
    return mean * model.y_scale + model.y_mean, var * model.y_scale ** 2


def gp_mean(model: GPModel, x) -> float:
    k = kernel_matrix(np.atleast_2d(x), model.X, model.lengthscale, model.signal_var)[0]
    return float(k @ model.alpha) * model.y_scale + model.y_mean


def gp_mean_grad(model: GPModel, x) -> np.ndarray:
    return gp_mean_and_grad(model, x)[1]


def gp_mean_and_grad(model: GPModel, x) -> tuple:
    x = np.asarray(x, dtype=float)
    k = kernel_matrix(x[None, :], model.X, model.lengthscale, model.signal_var)[0]
    ka = k * model.alpha
    mean = float(ka.sum()) * model.y_scale + model.y_mean
    grad = (ka @ (model.X - x)) / model.lengthscale ** 2 * model.y_scale
    return mean, grad


def gp_predict_with_grad(model: GPModel, x) -> tuple:
    """Mean, variance and their input gradients at one point (raw units)."""
    x = np.asarray(x, dtype=float)
    k = kernel_matrix(x[None, :], model.X, model.lengthscale, model.signal_var)[0]
    diff = (model.X - x) / model.lengthscale ** 2  # dk/dx = k * diff
    dk = k[:, None] * diff
    mean = float(k @ model.alpha)
    dmean = model.alpha @ dk
    w = cho_solve((model.chol, True), k, check_finite=False)
    var = model.signal_var - float(k @ w)
    dvar = -2.0 * (w @ dk)
    if var < 0.0:
        model.clamped += 1
        var, dvar = 0.0, np.zeros_like(dvar)
    s = model.y_scale
    return mean * s + model.y_mean, var * s * s, dmean * s, dvar * s * s


# ---------------------------------------------------------------------------
# text serialisation
# ---------------------------------------------------------------------------

def gp_to_text(model: GPModel) -> str:
    doc = {
        "kind": "gp-rbf",
        "lengthscale": model.lengthscale,
        "signal_var": model.signal_var,
        "noise_var": model.noise_var,
        "y_mean": model.y_mean,
        "y_scale": model.y_scale,
        "X": model.X.tolist(),
        "y_std": model.y_std.tolist(),
    }
    return json.dumps(doc, indent=1)


def gp_from_text(text: str) -> GPModel:
    doc = json.loads(text)
    if doc.get("kind") != "gp-rbf":
        raise ValueError("not a GP model block")
    y_s = np.array(doc["y_std"], dtype=float)
    X = np.array(doc["X"], dtype=float).reshape(len(y_s), -1)
    return _condition_std(X, y_s, doc["lengthscale"], doc["signal_var"], doc["noise_var"],
                          doc["y_mean"], doc["y_scale"])
