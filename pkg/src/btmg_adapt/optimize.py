"""Box-constrained L-BFGS with a strong-Wolfe line search, and a multistart driver.

Bounds are handled by gradient projection: variables sitting on a bound with
the gradient pushing outward are frozen for the iteration, and every trial
point of the line search is projected back into the box.
"""

from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .core import Bounds, lhs_sample

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class OptimizerOptions:
    max_iters: int = 200
    memory: int = 10
    grad_tol: float = 1e-8
    c1: float = 1e-4
    c2: float = 0.9
    max_ls_trials: int = 20
    # stop once a step lowers f by less than ftol * max(|f|, 1); 0 disables
    ftol: float = 0.0
    # refine accepted first trial steps by one secant step (exact on quadratics)
    secant: bool = True

    def __post_init__(self):
        if not 0.0 < self.c1 < self.c2 < 1.0:
            raise ValueError("need 0 < c1 < c2 < 1")
        if self.max_iters < 0 or self.memory < 1:
            raise ValueError("max_iters >= 0 and memory >= 1 required")


@dataclass(frozen=True)
class OptResult:
    x_star: np.ndarray
    f_star: float
    iterations: int
    converged: bool
    n_evals: int = 0

    def same_as(self, other: "OptResult") -> bool:
        return (np.array_equal(self.x_star, other.x_star) and self.f_star == other.f_star
                and self.iterations == other.iterations and self.converged == other.converged)


class OptimizationError(RuntimeError):
    def __init__(self, msg: str, x=None):
        super().__init__(msg)
        self.x = x


class _Objective:
    """Evaluation wrapper: finiteness checks and an evaluation counter."""

    def __init__(self, f, grad):
        self.f = f
        self.grad = grad
        self.n = 0

    def __call__(self, x):
        self.n += 1
        if self.grad is None:
            fx, gx = self.f(x)
        else:
            fx, gx = self.f(x), self.grad(x)
        fx = float(fx)
        gx = np.asarray(gx, dtype=float)
        if not np.isfinite(fx) or not np.all(np.isfinite(gx)):
            raise OptimizationError(f"non-finite objective or gradient at x={x.tolist()!r}", x)
        return fx, gx


def _projected_grad_norm(x, g, lo, hi) -> float:
    return float(np.max(np.abs(np.clip(x - g, lo, hi) - x))) if x.size else 0.0


def _two_loop(g, S, Y):
    q = g.copy()
    alphas = []
    for s, y in zip(reversed(S), reversed(Y)):
        rho = 1.0 / (y @ s)
        a = rho * (s @ q)
        alphas.append((a, rho))
        q -= a * y
    if S:
        s, y = S[-1], Y[-1]
        q *= (s @ y) / (y @ y)
    for (s, y), (a, rho) in zip(zip(S, Y), reversed(alphas)):
        b = rho * (y @ q)
        q += (a - b) * s
    return q


class _LineSearch:
    """Strong-Wolfe search along the projected path ``P(x + a d)``."""

    def __init__(self, obj, x, fx, gx, d, lo, hi, opts):
        self.obj, self.x, self.d, self.lo, self.hi, self.opts = obj, x, d, lo, hi, opts
        self.phi0 = fx
        self.dphi0 = float(gx @ d)
        self.trials = 0
        self.cache = {}
        with np.errstate(divide="ignore", invalid="ignore"):
            brk = np.where(d > 0, (hi - x) / d, np.where(d < 0, (lo - x) / d, np.inf))
        finite = brk[np.isfinite(brk)]
        self.a_cap = float(finite.max()) if finite.size == brk.size else np.inf

    def point(self, a):
        return np.clip(self.x + a * self.d, self.lo, self.hi)

    def eval(self, a):
        if a in self.cache:
            return self.cache[a][:2]
        self.trials += 1
        xa = self.point(a)
        fa, ga = self.obj(xa)
        raw = self.x + a * self.d
        moving = (raw > self.lo) & (raw < self.hi)
        dphi = float(ga @ (self.d * moving))
        self.cache[a] = (fa, dphi, xa, ga)
        return fa, dphi

    def armijo(self, a, fa):
        return fa <= self.phi0 + self.opts.c1 * a * self.dphi0

    def wolfe(self, dphi):
        return abs(dphi) <= -self.opts.c2 * self.dphi0

    def run(self, a_init):
        a = min(a_init, self.a_cap)
        a_prev, f_prev, g_prev = 0.0, self.phi0, self.dphi0
        first = True
        while self.trials < self.opts.max_ls_trials:
            fa, ga = self.eval(a)
            if not self.armijo(a, fa) or (not first and fa >= f_prev):
                return self._zoom(a_prev, f_prev, g_prev, a, fa, ga)
            if self.wolfe(ga):
                return self._secant(a, fa, ga) if first and self.opts.secant else a
            if ga >= 0:
                return self._zoom(a, fa, ga, a_prev, f_prev, g_prev)
            if a >= self.a_cap:
                return a
            a_prev, f_prev, g_prev = a, fa, ga
            a = min(4.0 * a, self.a_cap)
            first = False
        return self._backtrack(a_init)

    def _zoom(self, lo, f_lo, g_lo, hi, f_hi, g_hi):
        while self.trials < self.opts.max_ls_trials:
            a = self._interpolate(lo, f_lo, g_lo, hi, f_hi, g_hi)
            fa, ga = self.eval(a)
            if not self.armijo(a, fa) or fa >= f_lo:
                hi, f_hi, g_hi = a, fa, ga
            else:
                if self.wolfe(ga):
                    return a
                if ga * (hi - lo) >= 0:
                    hi, f_hi, g_hi = lo, f_lo, g_lo
                lo, f_lo, g_lo = a, fa, ga
            if abs(hi - lo) <= 1e-16 * max(1.0, abs(lo)):
                break
        if lo > 0 and self.armijo(lo, f_lo):
            return lo
        return self._backtrack(min(1.0, self.a_cap))

    def _secant(self, a, fa, ga):
        # one secant step on the directional derivative; exact on quadratics
        denom = ga - self.dphi0
        if denom <= 0.0 or self.trials >= self.opts.max_ls_trials:
            return a
        b = min(-a * self.dphi0 / denom, self.a_cap)
        if abs(b - a) <= 1e-3 * a:
            return a
        fb, gb = self.eval(b)
        if self.armijo(b, fb) and fb < fa and self.wolfe(gb):
            return b
        return a

    @staticmethod
    def _interpolate(a, fa, ga, b, fb, gb):
        # safeguarded cubic minimiser on [a, b]
        lo_, hi_ = min(a, b), max(a, b)
        w = hi_ - lo_
        d1 = ga + gb - 3.0 * (fa - fb) / (a - b)
        disc = d1 * d1 - ga * gb
        if disc >= 0.0:
            d2 = np.copysign(np.sqrt(disc), b - a)
            denom = gb - ga + 2.0 * d2
            if denom != 0.0:
                c = b - (b - a) * (gb + d2 - d1) / denom
                if lo_ + 0.1 * w <= c <= hi_ - 0.1 * w:
                    return float(c)
        return 0.5 * (a + b)

    def _backtrack(self, a):
        for _ in range(60):
            fa, _ = self.eval(a)
            if self.armijo(a, fa):
                return a
            a *= 0.5
        return None


def lbfgs_min(f: Callable, grad: Optional[Callable], x0, bounds: Bounds,
              opts: Optional[OptimizerOptions] = None) -> OptResult:
    """Minimise ``f`` over ``bounds`` starting from ``x0``.

    ``grad`` may be ``None``, in which case ``f`` must return ``(value, gradient)``.
    Raises :class:`OptimizationError` on a non-finite value or gradient.
    """
    opts = opts or OptimizerOptions()
    lo, hi = bounds.lo, bounds.hi
    obj = _Objective(f, grad)
    x = np.clip(np.asarray(x0, dtype=float), lo, hi)
    fx, gx = obj(x)
    S: deque = deque(maxlen=opts.memory)
    Y: deque = deque(maxlen=opts.memory)
    it = 0
    converged = False
    while True:
        if _projected_grad_norm(x, gx, lo, hi) <= opts.grad_tol:
            converged = True
            break
        if it >= opts.max_iters:
            break
        free = ~(((x <= lo) & (gx > 0)) | ((x >= hi) & (gx < 0)))
        gf = gx * free
        d = -_two_loop(gf, S, Y) * free if S else -gf
        if not gx @ d < 0:
            S.clear()
            Y.clear()
            d = -gf
        a_init = 1.0 if S else min(1.0, 1.0 / max(float(np.max(np.abs(d))), 1e-300))
        ls = _LineSearch(obj, x, fx, gx, d, lo, hi, opts)
        a = ls.run(a_init)
        if a is None:
            if S:
                S.clear()
                Y.clear()
                continue
            break
        f_new, _, x_new, g_new = ls.cache[a]
        it += 1
        if not f_new < fx:
            break
        small = fx - f_new <= opts.ftol * max(abs(fx), abs(f_new), 1.0)
        s, y = x_new - x, g_new - gx
        sy = s @ y
        if sy > 1e-10 * np.linalg.norm(s) * np.linalg.norm(y):
            S.append(s)
            Y.append(y)
        x, fx, gx = x_new, f_new, g_new
        if small:
            converged = _projected_grad_norm(x, gx, lo, hi) <= opts.grad_tol
            break
    return OptResult(x, fx, it, converged, obj.n)


def run_starts(f, grad, bounds: Bounds, starts: Sequence, opts=None, maximize=True) -> list:
    """Run :func:`lbfgs_min` from every start; failed starts yield ``None``.

    With ``maximize`` the reported ``f_star`` is in the caller's orientation.
    """
    if maximize:
        if grad is None:
            def neg(x):
                v, g = f(x)
                return -v, -np.asarray(g)
            fn, gn = neg, None
        else:
            fn, gn = (lambda x: -f(x)), (lambda x: -np.asarray(grad(x)))
    else:
        fn, gn = f, grad
    out = []
    for i, s in enumerate(starts):
        try:
            r = lbfgs_min(fn, gn, s, bounds, opts)
        except OptimizationError as exc:
            log.warning("start %d failed: %s", i, exc)
            out.append(None)
            continue
        if maximize:
            r = OptResult(r.x_star, -r.f_star, r.iterations, r.converged, r.n_evals)
        out.append(r)
    return out


def multistart_max(f, grad, bounds: Bounds, n_starts: int, extra_starts=(), seed=0,
                   opts=None) -> OptResult:
    """Maximise ``f`` from ``n_starts`` LHS points plus ``extra_starts``.

    Ties between equally good endpoints go to the lowest start index.
    """
    extra = [np.asarray(s, dtype=float) for s in extra_starts]
    if n_starts < 1 and not extra:
        raise ValueError("need n_starts >= 1 or at least one extra start")
    starts = list(lhs_sample(n_starts, bounds, seed)) if n_starts >= 1 else []
    starts += extra
    results = run_starts(f, grad, bounds, starts, opts, maximize=True)
    best = None
    for r in results:
        if r is not None and (best is None or r.f_star > best.f_star):
            best = r
    if best is None:
        raise OptimizationError("all starts failed")
    return best
