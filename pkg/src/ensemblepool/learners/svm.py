"""C-SVC with an RBF kernel, one-vs-one over class pairs.

Each binary dual

    min 1/2 a^T Q a - e^T a,   0 <= a_i <= C,   y^T a = 0,   Q_ij = y_i y_j K_ij

is solved by SMO with second-order working-set selection, stopping when the
maximal KKT violation m(a) - M(a) falls below ``tol``.
"""
from __future__ import annotations

from itertools import combinations

import numpy as np

from .base import Learner, TrainSet, warn_nonconvergence

TAU = 1e-12


def rbf_kernel(a: np.ndarray, b: np.ndarray, gamma: float) -> np.ndarray:
    sq = (np.sum(a * a, axis=1)[:, None] + np.sum(b * b, axis=1)[None, :] - 2.0 * a @ b.T)
    return np.exp(-gamma * np.maximum(sq, 0.0))


def dual_objective(alpha, q) -> float:
    return float(0.5 * alpha @ q @ alpha - alpha.sum())


def kkt_gap(alpha, grad, y, c) -> float:
    """m(a) - M(a): the largest KKT violation of the current iterate."""
    up = ((y > 0) & (alpha < c)) | ((y < 0) & (alpha > 0))
    low = ((y > 0) & (alpha > 0)) | ((y < 0) & (alpha < c))
    score = -y * grad
    if not up.any() or not low.any():
        return 0.0
    return float(score[up].max() - score[low].min())


def smo(k: np.ndarray, y: np.ndarray, c: float, tol: float = 1e-3, max_iter: int = 100_000):
    """Solve one binary dual problem.

    Returns ``(alpha, rho, n_iter, converged)``; the decision value is
    ``sum_i alpha_i y_i K(x_i, x) - rho``.
    """
    n = y.size
    q = (y[:, None] * y[None, :]) * k
    qd = np.diag(q).copy()
    alpha = np.zeros(n)
    grad = -np.ones(n)
    converged = False
    it = 0
    for it in range(max_iter):
        up = ((y > 0) & (alpha < c)) | ((y < 0) & (alpha > 0))
        low = ((y > 0) & (alpha > 0)) | ((y < 0) & (alpha < c))
        score = -y * grad
        up_scores = np.where(up, score, -np.inf)
        i = int(np.argmax(up_scores))
        g_max = up_scores[i]
        low_scores = np.where(low, score, np.inf)
        if g_max - low_scores.min() < tol:
            converged = True
            break
        # second-order choice of j among violating low-set candidates
        b = g_max - score
        a = qd[i] + qd - 2.0 * y[i] * y * q[i]
        a = np.where(a > 0, a, TAU)
        gain = np.where(low & (b > 0), -(b * b) / a, np.inf)
        j = int(np.argmin(gain))

        ai_old, aj_old = alpha[i], alpha[j]
        quad = qd[i] + qd[j] - 2.0 * y[i] * y[j] * q[i, j]
        quad = quad if quad > 0 else TAU
        if y[i] != y[j]:
            delta = (-grad[i] - grad[j]) / quad
            diff = alpha[i] - alpha[j]
            alpha[i] += delta
            alpha[j] += delta
            if diff > 0:
                if alpha[j] < 0:
                    alpha[j], alpha[i] = 0.0, diff
            elif alpha[i] < 0:
                alpha[i], alpha[j] = 0.0, -diff
            if diff > 0:
                if alpha[i] > c:
                    alpha[i], alpha[j] = c, c - diff
            elif alpha[j] > c:
                alpha[j], alpha[i] = c, c + diff
        else:
            delta = (grad[i] - grad[j]) / quad
            total = alpha[i] + alpha[j]
            alpha[i] -= delta
            alpha[j] += delta
            if total > c:
                if alpha[i] > c:
                    alpha[i], alpha[j] = c, total - c
            elif alpha[j] < 0:
                alpha[j], alpha[i] = 0.0, total
            if total > c:
                if alpha[j] > c:
                    alpha[j], alpha[i] = c, total - c
            elif alpha[i] < 0:
                alpha[i], alpha[j] = 0.0, total
        grad += q[:, i] * (alpha[i] - ai_old) + q[:, j] * (alpha[j] - aj_old)
    if not converged:
        warn_nonconvergence("SMO")
    return alpha, _rho(alpha, grad, y, c), it, converged


def _rho(alpha, grad, y, c) -> float:
    """Offset from free support vectors, or the midpoint of the feasible interval."""
    yg = y * grad
    free = (alpha > 0) & (alpha < c)
    if free.any():
        return float(yg[free].mean())
    at_upper = alpha >= c
    # bounded alphas constrain rho from one side depending on label
    upper_side = (at_upper & (y < 0)) | (~at_upper & (y > 0))
    ub = yg[upper_side].min() if upper_side.any() else np.inf
    lb = yg[~upper_side].max() if (~upper_side).any() else -np.inf
    return float(0.5 * (ub + lb))


class SvmModel(Learner):
    kind = "svm"

    def __init__(self, pairs, support, dual_coef, rho, gamma, c_reg, n_features, classes, class_count):
        self.pairs = [tuple(int(v) for v in p) for p in pairs]
        self.support = [np.asarray(s, dtype=float).reshape(-1, n_features) for s in support]
        self.dual_coef = [np.asarray(d, dtype=float) for d in dual_coef]
        self.rho = [float(r) for r in rho]
        self.gamma = float(gamma)
        self.c_reg = float(c_reg)
        self.n_features = int(n_features)
        self.classes = np.asarray(classes, dtype=np.int64)
        self.class_count = int(class_count)
        self.diagnostics = []

    def decision_values(self, features) -> np.ndarray:
        """(N, n_pairs) binary decision values; positive favours the pair's first class."""
        x = self._check_query(features)
        out = np.empty((x.shape[0], len(self.pairs)))
        for p, (sv, coef, rho) in enumerate(zip(self.support, self.dual_coef, self.rho)):
            out[:, p] = (rbf_kernel(x, sv, self.gamma) @ coef - rho) if sv.size else -rho
        return out

    def votes(self, features) -> np.ndarray:
        dec = self.decision_values(features)
        votes = np.zeros((dec.shape[0], self.classes.size))
        for p, (a, b) in enumerate(self.pairs):
            votes[:, a] += dec[:, p] > 0
            votes[:, b] += dec[:, p] <= 0
        return votes

    def _proba_present(self, x):
        votes = self.votes(x)
        return votes / votes.sum(axis=1, keepdims=True)

    def to_dict(self) -> dict:
        return {
            "pairs": [list(p) for p in self.pairs],
            "support": [s.tolist() for s in self.support],
            "dual_coef": [d.tolist() for d in self.dual_coef],
            "rho": list(self.rho),
            "gamma": self.gamma,
            "c_reg": self.c_reg,
            "n_features": self.n_features,
            "classes": self.classes.tolist(),
            "class_count": self.class_count,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SvmModel":
        return cls(d["pairs"], d["support"], d["dual_coef"], d["rho"], d["gamma"], d["c_reg"],
                   d["n_features"], d["classes"], d["class_count"])


def fit_svm(train: TrainSet, c_reg: float = 1.0, gamma: float = None, tol: float = 1e-3,
            max_iter: int = 100_000) -> SvmModel:
    """One-vs-one RBF C-SVC. ``gamma`` defaults to ``1 / n_features``.

    Pair indices refer to positions in ``train.present_classes``; within a
    pair the first class is labelled +1.
    """
    x = train.features
    y = train.encoded_labels()
    gamma = 1.0 / x.shape[1] if gamma is None else float(gamma)
    pairs, support, coefs, rhos, diagnostics = [], [], [], [], []
    for a, b in combinations(range(train.present_classes.size), 2):
        rows = np.flatnonzero((y == a) | (y == b))
        yy = np.where(y[rows] == a, 1.0, -1.0)
        k = rbf_kernel(x[rows], x[rows], gamma)
        alpha, rho, n_iter, converged = smo(k, yy, c_reg, tol=tol, max_iter=max_iter)
        sv = alpha > 0
        pairs.append((a, b))
        support.append(x[rows][sv])
        coefs.append(alpha[sv] * yy[sv])
        rhos.append(rho)
        diagnostics.append({"rows": rows, "alpha": alpha, "y": yy, "n_iter": n_iter, "converged": converged})
    model = SvmModel(pairs, support, coefs, rhos, gamma, c_reg, x.shape[1], train.present_classes,
                     train.class_count)
    model.diagnostics = diagnostics
    return model
