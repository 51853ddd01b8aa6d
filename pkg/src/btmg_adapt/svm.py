"""Class-weighted soft-margin SVM with an RBF kernel, trained by SMO.

The dual is solved with maximal-violating-pair working-set selection (no
shrinking).  Each sample's box constraint is ``C * w_class`` with balanced
class weights ``n / (2 n_class)``, which counteracts unequal numbers of
feasible and infeasible samples.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .gp import sq_dists

KKT_TOL = 1e-5
MAX_UPDATES = 1_000_000
DEFAULT_C = 10.0
_TAU = 1e-12


@dataclass
class SVMModel:
    support_X: np.ndarray
    coef: np.ndarray  # alpha_i * y_i
    b: float
    gamma: float
    C: float
    w_pos: float
    w_neg: float
    beta: float
    constant: bool = False
    fit_info: dict = field(default_factory=dict, repr=False)


def class_weights(labels) -> tuple:
    """Balanced weights ``(w_pos, w_neg)`` for 0/1 labels."""
    labels = np.asarray(labels)
    n = labels.size
    n_pos = int(np.count_nonzero(labels == 1))
    n_neg = n - n_pos
    w_pos = n / (2.0 * n_pos) if n_pos else 0.0
    w_neg = n / (2.0 * n_neg) if n_neg else 0.0
    return w_pos, w_neg


def rbf_gram(A, B, gamma: float) -> np.ndarray:
    return np.exp(-gamma * sq_dists(A, B))


def dual_objective(alpha, y, K) -> float:
    """Dual objective (to be maximised): sum(alpha) - 1/2 (alpha*y)^T K (alpha*y)."""
    ay = np.asarray(alpha) * np.asarray(y)
    return float(np.sum(alpha) - 0.5 * ay @ K @ ay)


def _smo(K, y, Cv, tol, max_updates):
    n = len(y)
    a = np.zeros(n)
    G = -np.ones(n)
    QD = np.diag(K).copy()
    pos, neg = y > 0, y < 0
    updates = 0
    gap = np.inf
    while True:
        mvg = -y * G
        up = (pos & (a < Cv)) | (neg & (a > 0))
        low = (pos & (a > 0)) | (neg & (a < Cv))
        i = int(np.argmax(np.where(up, mvg, -np.inf)))
        j = int(np.argmin(np.where(low, mvg, np.inf)))
        gap = mvg[i] - mvg[j] if up[i] and low[j] else 0.0
        if gap < tol or updates >= max_updates:
            break
        Ki, Kj = K[i], K[j]
        Qij = y[i] * y[j] * Ki[j]
        Ci, Cj = Cv[i], Cv[j]
        ai, aj = a[i], a[j]
        if y[i] != y[j]:
            quad = max(QD[i] + QD[j] + 2.0 * Qij, _TAU)
            delta = (-G[i] - G[j]) / quad
            diff = ai - aj
            ai += delta
            aj += delta
            if diff > 0:
                if aj < 0:
                    aj, ai = 0.0, diff
            else:
                if ai < 0:
                    ai, aj = 0.0, -diff
            if diff > Ci - Cj:
                if ai > Ci:
                    ai, aj = Ci, Ci - diff
            else:
                if aj > Cj:
                    aj, ai = Cj, Cj + diff
        else:
            quad = max(QD[i] + QD[j] - 2.0 * Qij, _TAU)
            delta = (G[i] - G[j]) / quad
            s = ai + aj
            ai -= delta
            aj += delta
            if s > Ci:
                if ai > Ci:
                    ai, aj = Ci, s - Ci
            else:
                if aj < 0:
                    aj, ai = 0.0, s
            if s > Cj:
                if aj > Cj:
                    aj, ai = Cj, s - Cj
            else:
                if ai < 0:
                    ai, aj = 0.0, s
        dai, daj = ai - a[i], aj - a[j]
        a[i], a[j] = ai, aj
        G += y * (Ki * (y[i] * dai) + Kj * (y[j] * daj))
        updates += 1
    return a, G, updates, float(gap)


def _bias(a, G, y, Cv):
    yG = y * G
    free = (a > 0) & (a < Cv)
    if np.any(free):
        rho = float(np.mean(yG[free]))
    else:
        pos, neg = y > 0, y < 0
        at_ub, at_lb = a >= Cv, a <= 0
        ub_set = (pos & at_ub) | (neg & at_lb)
        lb_set = (pos & at_lb) | (neg & at_ub)
        ub = float(np.min(yG[ub_set])) if np.any(ub_set) else np.inf
        lb = float(np.max(yG[lb_set])) if np.any(lb_set) else -np.inf
        if np.isfinite(ub) and np.isfinite(lb):
            rho = 0.5 * (ub + lb)
        else:
            rho = ub if np.isfinite(ub) else lb
    return -rho


def svm_fit(X, labels, C: float = DEFAULT_C, gamma=None, seed=0, tol: float = KKT_TOL,
            max_updates: int = MAX_UPDATES) -> SVMModel:
    """Train the weighted SVM on 0/1 labels (1 = feasible).

    ``gamma`` defaults to ``1 / d``.  With a single class present, a constant
    classifier of that class is returned with ``constant=True``.  SMO is
    deterministic, so ``seed`` has no effect; it is accepted for interface
    uniformity.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    labels = np.asarray(labels).astype(int).ravel()
    if X.shape[0] != labels.size:
        raise ValueError("X rows must match label count")
    if not set(np.unique(labels)) <= {0, 1}:
        raise ValueError("labels must be 0/1")
    if gamma is None:
        gamma = 1.0 / X.shape[1]
    if C <= 0 or gamma <= 0:
        raise ValueError("C and gamma must be positive")
    w_pos, w_neg = class_weights(labels)
    if w_pos == 0.0 or w_neg == 0.0:
        cls = 1 if w_neg == 0.0 else 0
        return SVMModel(np.zeros((0, X.shape[1])), np.zeros(0), 1.0 if cls else -1.0,
                        float(gamma), float(C), w_pos, w_neg, 1.0, constant=True,
                        fit_info={"class": cls})
    y = np.where(labels == 1, 1.0, -1.0)
    Cv = C * np.where(labels == 1, w_pos, w_neg)
    K = rbf_gram(X, X, gamma)
    a, G, updates, gap = _smo(K, y, Cv, tol, max_updates)
    b = _bias(a, G, y, Cv)
    sv = a > 0
    coef = a[sv] * y[sv]
    dec = K[:, sv] @ coef + b
    margins = np.abs(dec[dec != 0.0])
    med = float(np.median(margins)) if margins.size else 0.0
    beta = math.log(3.0) / med if med > 0 else 1.0
    info = {"alpha": a, "y": y, "Cv": Cv, "kkt_gap": gap, "updates": updates,
            "dual_objective": dual_objective(a, y, K)}
    return SVMModel(X[sv].copy(), coef, float(b), float(gamma), float(C), w_pos, w_neg,
                    float(beta), fit_info=info)


def svm_decision(model: SVMModel, x) -> float:
    return float(svm_decision_many(model, np.atleast_2d(x))[0])


def svm_decision_many(model: SVMModel, Xq) -> np.ndarray:
    Xq = np.atleast_2d(np.asarray(Xq, dtype=float))
    if model.constant or model.coef.size == 0:
        return np.full(Xq.shape[0], model.b)
    return rbf_gram(Xq, model.support_X, model.gamma) @ model.coef + model.b


def svm_classify(model: SVMModel, x) -> int:
    return 1 if svm_decision(model, x) >= 0.0 else 0


def _sigmoid(t: float) -> float:
    if t >= 0:
        return 1.0 / (1.0 + math.exp(-t))
    e = math.exp(t)
    return e / (1.0 + e)


def svm_decision_and_grad(model: SVMModel, x) -> tuple:
    x = np.asarray(x, dtype=float)
    if model.constant or model.coef.size == 0:
        return model.b, np.zeros_like(x)
    diff = model.support_X - x
    k = np.exp(-model.gamma * np.einsum("ij,ij->i", diff, diff))
    ck = model.coef * k
    return float(ck.sum()) + model.b, 2.0 * model.gamma * (ck @ diff)


def svm_soft(model: SVMModel, x) -> tuple:
    """Smooth feasibility ``sigmoid(beta * decision)`` and its gradient."""
    d, dd = svm_decision_and_grad(model, x)
    p = _sigmoid(model.beta * d)
    return p, model.beta * p * (1.0 - p) * dd


def svm_to_text(model: SVMModel) -> str:
    doc = {
        "kind": "svm-rbf",
        "support_X": model.support_X.tolist(),
        "coef": model.coef.tolist(),
        "b": model.b,
        "gamma": model.gamma,
        "C": model.C,
        "w_pos": model.w_pos,
        "w_neg": model.w_neg,
        "beta": model.beta,
        "constant": model.constant,
        "dim": int(model.support_X.shape[1]),
    }
    return json.dumps(doc, indent=1)


def svm_from_text(text: str) -> SVMModel:
    doc = json.loads(text)
    if doc.get("kind") != "svm-rbf":
        raise ValueError("not an SVM model block")
    sx = np.array(doc["support_X"], dtype=float).reshape(len(doc["coef"]), doc["dim"])
    return SVMModel(sx, np.array(doc["coef"], dtype=float), doc["b"], doc["gamma"], doc["C"],
                    doc["w_pos"], doc["w_neg"], doc["beta"], constant=doc["constant"])
