"""Multinomial logistic regression with an L2 penalty, fitted by Newton-CG.

Each Newton direction solves ``H d = -g`` with conjugate gradients driven by
Hessian-vector products, so the full (K*(F+1))^2 Hessian is never formed.
"""
from __future__ import annotations

import numpy as np
from scipy.special import logsumexp, softmax

from .base import Learner, TrainSet, warn_nonconvergence


def _design(x: np.ndarray) -> np.ndarray:
    return np.hstack([x, np.ones((x.shape[0], 1))])


def objective(theta: np.ndarray, xd: np.ndarray, y: np.ndarray, lam: float) -> float:
    """Summed cross-entropy plus ``lam/2 * ||W||^2``; the bias column is unpenalized."""
    logits = xd @ theta.T
    nll = np.sum(logsumexp(logits, axis=1) - logits[np.arange(y.size), y])
    w = theta[:, :-1]
    return float(nll + 0.5 * lam * np.sum(w * w))


def gradient(theta, xd, y, lam):
    p = softmax(xd @ theta.T, axis=1)
    p[np.arange(y.size), y] -= 1.0
    g = p.T @ xd
    g[:, :-1] += lam * theta[:, :-1]
    return g


def hessian_vector(v, xd, p, lam):
    z = xd @ v.T
    r = p * z
    r -= p * r.sum(axis=1, keepdims=True)
    hv = r.T @ xd
    hv[:, :-1] += lam * v[:, :-1]
    return hv


def _conjugate_gradient(hvp, g, max_iter):
    """Approximately solve ``H d = -g`` starting from d = 0."""
    g_norm = np.linalg.norm(g)
    tol = min(0.5, np.sqrt(g_norm)) * g_norm
    d = np.zeros_like(g)
    r = -g.copy()
    p = r.copy()
    rr = np.vdot(r, r)
    for _ in range(max_iter):
        if np.sqrt(rr) <= tol:
            break
        hp = hvp(p)
        curvature = np.vdot(p, hp)
        if curvature <= 0:
            break
        step = rr / curvature
        d += step * p
        r -= step * hp
        rr_new = np.vdot(r, r)
        p = r + (rr_new / rr) * p
        rr = rr_new
    if not np.any(d):
        d = -g
    return d


class LogRegModel(Learner):
    kind = "logistic_regression"

    def __init__(self, weights, bias, classes, class_count, converged=True, n_iter=0, grad_norm=0.0):
        self.weights = np.asarray(weights, dtype=float)
        self.bias = np.asarray(bias, dtype=float)
        self.classes = np.asarray(classes, dtype=np.int64)
        self.class_count = int(class_count)
        self.n_features = self.weights.shape[1]
        self.converged = converged
        self.n_iter = n_iter
        self.grad_norm = grad_norm

    def decision_function(self, features) -> np.ndarray:
        return self._check_query(features) @ self.weights.T + self.bias

    def _proba_present(self, x):
        return softmax(x @ self.weights.T + self.bias, axis=1)

    def to_dict(self) -> dict:
        return {
            "weights": self.weights.tolist(),
            "bias": self.bias.tolist(),
            "classes": self.classes.tolist(),
            "class_count": self.class_count,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "LogRegModel":
        w = np.asarray(d["weights"], dtype=float).reshape(len(d["classes"]), -1)
        return cls(w, d["bias"], d["classes"], d["class_count"])


def fit_logistic_regression(train: TrainSet, lam: float = 1.0, tol: float = 1e-6,
                            max_iter: int = 100) -> LogRegModel:
    """Newton-CG on the penalized multinomial log-loss.

    Stops once the gradient's max-norm drops below ``tol``. When ``max_iter``
    is hit first, the iterate with the smallest gradient is returned and a
    NonConvergenceWarning is emitted.
    """
    xd = _design(train.features)
    y = train.encoded_labels()
    k = train.present_classes.size
    theta = np.zeros((k, xd.shape[1]))
    cg_iter = max(10, theta.size)

    f = objective(theta, xd, y, lam)
    g = gradient(theta, xd, y, lam)
    best = (np.abs(g).max(), theta)
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        if np.abs(g).max() < tol:
            converged = True
            it -= 1
            break
        p = softmax(xd @ theta.T, axis=1)
        d = _conjugate_gradient(lambda v: hessian_vector(v, xd, p, lam), g, cg_iter)
        slope = np.vdot(g, d)
        if slope >= 0:  # not a descent direction; fall back to steepest descent
            d, slope = -g, -np.vdot(g, g)
        step = 1.0
        while True:
            candidate = theta + step * d
            f_new = objective(candidate, xd, y, lam)
            if f_new <= f + 1e-4 * step * slope or step < 1e-10:
                break
            step *= 0.5
        theta, f = candidate, f_new
        g = gradient(theta, xd, y, lam)
        if np.abs(g).max() < best[0]:
            best = (np.abs(g).max(), theta)
    else:
        converged = np.abs(g).max() < tol
    if not converged:
        warn_nonconvergence("logistic regression Newton-CG")
        theta = best[1]
    grad_norm = float(np.abs(gradient(theta, xd, y, lam)).max())
    return LogRegModel(theta[:, :-1], theta[:, -1], train.present_classes, train.class_count,
                       converged=converged, n_iter=it, grad_norm=grad_norm)
