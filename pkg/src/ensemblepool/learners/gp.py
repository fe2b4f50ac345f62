"""Gaussian process classification with the Laplace approximation.

Multi-class problems are handled one-vs-rest: one binary GP (labels +1/-1,
logistic likelihood, unit-variance RBF kernel) per class. The posterior mode
follows the Newton scheme of Rasmussen & Williams (Algorithm 3.1), with step
halving so the Laplace objective never decreases.
"""
from __future__ import annotations

import numpy as np
from scipy.linalg import cho_solve, cholesky, solve_triangular
from scipy.special import expit, log_expit

from .base import Learner, TrainSet, SizeGuardError, warn_nonconvergence

MAX_SAMPLES = 5000


def rbf(a, b, length_scale):
    sq = np.sum(a * a, axis=1)[:, None] + np.sum(b * b, axis=1)[None, :] - 2.0 * a @ b.T
    return np.exp(-0.5 * np.maximum(sq, 0.0) / length_scale**2)


def log_likelihood_grad(f, y):
    """d/df of sum log sigmoid(y * f) for y in {-1, +1}."""
    return (y + 1) / 2 - expit(f)


def laplace_objective(f, a, y) -> float:
    """log p(y|f) - 1/2 f^T K^-1 f with ``a = K^-1 f`` supplied."""
    return float(np.sum(log_expit(y * f)) - 0.5 * a @ f)


def find_mode(k, y, tol=1e-8, max_iter=100):
    """Newton iteration for the posterior mode of one binary GP.

    Returns ``(f, a, objectives, grad_norm, converged)`` where ``a = K^-1 f``
    and ``objectives`` lists the Laplace objective after every iterate.
    """
    n = y.size
    f = np.zeros(n)
    a = np.zeros(n)
    psi = laplace_objective(f, a, y)
    objectives = [psi]
    grad_norm = np.abs(log_likelihood_grad(f, y) - a).max()
    converged = False
    for _ in range(max_iter):
        if grad_norm < tol:
            converged = True
            break
        pi = expit(f)
        w = pi * (1 - pi)
        sw = np.sqrt(w)
        chol = cholesky(np.eye(n) + sw[:, None] * k * sw[None, :], lower=True)
        b = w * f + log_likelihood_grad(f, y)
        a_full = b - sw * cho_solve((chol, True), sw * (k @ b))
        da = a_full - a
        df = k @ a_full - f
        step = 1.0
        while True:
            f_new, a_new = f + step * df, a + step * da
            psi_new = laplace_objective(f_new, a_new, y)
            if psi_new >= psi or step < 1e-10:
                break
            step *= 0.5
        if psi_new < psi:
            break
        f, a, psi = f_new, a_new, psi_new
        objectives.append(psi)
        grad_norm = np.abs(log_likelihood_grad(f, y) - a).max()
    else:
        converged = grad_norm < tol
    if not converged:
        warn_nonconvergence("GP Laplace mode search")
    return f, a, objectives, float(grad_norm), converged


class GpModel(Learner):
    kind = "gaussian_process"

    def __init__(self, features, targets, modes, length_scale, class_count, classes=None):
        self.features = np.asarray(features, dtype=float)
        self.targets = np.asarray(targets, dtype=float).reshape(-1, self.features.shape[0])
        self.modes = np.asarray(modes, dtype=float).reshape(self.targets.shape)
        self.length_scale = float(length_scale)
        self.class_count = int(class_count)
        self.classes = np.arange(self.class_count) if classes is None else np.asarray(classes, dtype=np.int64)
        self.n_features = self.features.shape[1]
        self.diagnostics = []
        self._factors = None

    def _cache(self):
        if self._factors is None:
            k = rbf(self.features, self.features, self.length_scale)
            n = k.shape[0]
            factors = []
            for f, y in zip(self.modes, self.targets):
                pi = expit(f)
                sw = np.sqrt(pi * (1 - pi))
                chol = cholesky(np.eye(n) + sw[:, None] * k * sw[None, :], lower=True)
                factors.append((log_likelihood_grad(f, y), sw, chol))
            self._factors = factors
        return self._factors

    def latent(self, features):
        """Predictive mean and variance of each class's latent function: two (N, K) arrays."""
        x = self._check_query(features)
        ks = rbf(self.features, x, self.length_scale)
        means, variances = [], []
        for grad, sw, chol in self._cache():
            means.append(ks.T @ grad)
            v = solve_triangular(chol, sw[:, None] * ks, lower=True)
            variances.append(np.maximum(1.0 - np.sum(v * v, axis=0), 0.0))
        return np.column_stack(means), np.column_stack(variances)

    def binary_proba(self, features) -> np.ndarray:
        mean, var = self.latent(features)
        return expit(mean / np.sqrt(1.0 + np.pi * var / 8.0))

    def _proba_present(self, x):
        p = self.binary_proba(x)
        return p / p.sum(axis=1, keepdims=True)

    def to_dict(self) -> dict:
        return {
            "features": self.features.tolist(),
            "targets": self.targets.tolist(),
            "modes": self.modes.tolist(),
            "length_scale": self.length_scale,
            "classes": self.classes.tolist(),
            "class_count": self.class_count,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GpModel":
        return cls(d["features"], d["targets"], d["modes"], d["length_scale"], d["class_count"],
                   d["classes"])


def fit_gp_classifier(train: TrainSet, length_scale: float = 1.0, tol: float = 1e-8,
                      max_iter: int = 100) -> GpModel:
    n = train.labels.size
    if n > MAX_SAMPLES:
        raise SizeGuardError(f"{n} training samples exceed the dense-kernel limit of {MAX_SAMPLES}")
    x = train.features
    k = rbf(x, x, length_scale)
    targets, modes, diagnostics = [], [], []
    for c in train.present_classes:
        y = np.where(train.labels == c, 1.0, -1.0)
        f, _, objectives, grad_norm, converged = find_mode(k, y, tol=tol, max_iter=max_iter)
        targets.append(y)
        modes.append(f)
        diagnostics.append({"objectives": objectives, "grad_norm": grad_norm, "converged": converged})
    model = GpModel(x, targets, modes, length_scale, train.class_count, train.present_classes)
    model.diagnostics = diagnostics
    return model
