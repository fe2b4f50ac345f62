"""CART classification tree grown with Gini impurity."""
from __future__ import annotations

import numpy as np

from .base import Learner, TrainSet


def gini(counts: np.ndarray) -> float:
    total = counts.sum()
    if total == 0:
        return 0.0
    p = counts / total
    return float(1.0 - np.dot(p, p))


def best_split(x: np.ndarray, y: np.ndarray, n_classes: int):
    """Return ``(feature, threshold, decrease)`` of the best Gini split, or None.

    ``decrease`` is parent impurity minus the size-weighted child impurities.
    Candidate thresholds are midpoints between consecutive distinct values.
    Equal decreases keep the earliest (feature, threshold) found.
    """
    n = y.size
    onehot = np.eye(n_classes)[y]
    parent = gini(onehot.sum(axis=0))
    best = None
    for j in range(x.shape[1]):
        order = np.argsort(x[:, j], kind="stable")
        xs = x[order, j]
        left = np.cumsum(onehot[order], axis=0)[:-1]
        cut = np.flatnonzero(xs[1:] > xs[:-1])
        if cut.size == 0:
            continue
        left = left[cut]
        right = onehot.sum(axis=0) - left
        n_left = (cut + 1).astype(float)
        n_right = n - n_left
        gini_left = 1.0 - np.sum((left / n_left[:, None]) ** 2, axis=1)
        gini_right = 1.0 - np.sum((right / n_right[:, None]) ** 2, axis=1)
        decrease = parent - (n_left * gini_left + n_right * gini_right) / n
        i = int(np.argmax(decrease))
        if best is None or decrease[i] > best[2] + 1e-15:
            threshold = 0.5 * (xs[cut[i]] + xs[cut[i] + 1])
            best = (j, float(threshold), float(decrease[i]))
    return best


class TreeModel(Learner):
    """Binary tree stored as parallel node arrays; leaves have feature -1."""

    kind = "tree"

    def __init__(self, feature, threshold, left, right, value, n_features, class_count):
        self.feature = np.asarray(feature, dtype=np.int64)
        self.threshold = np.asarray(threshold, dtype=float)
        self.left = np.asarray(left, dtype=np.int64)
        self.right = np.asarray(right, dtype=np.int64)
        self.value = np.asarray(value, dtype=float).reshape(len(self.feature), class_count)
        self.n_features = int(n_features)
        self.class_count = int(class_count)
        self.classes = np.arange(self.class_count)

    @property
    def node_count(self) -> int:
        return self.feature.size

    @property
    def depth(self) -> int:
        def walk(node):
            if self.feature[node] < 0:
                return 0
            return 1 + max(walk(self.left[node]), walk(self.right[node]))
        return walk(0)

    def apply(self, features) -> np.ndarray:
        x = self._check_query(features)
        nodes = np.zeros(x.shape[0], dtype=np.int64)
        active = self.feature[nodes] >= 0
        while np.any(active):
            idx = np.flatnonzero(active)
            cur = nodes[idx]
            go_left = x[idx, self.feature[cur]] <= self.threshold[cur]
            nodes[idx] = np.where(go_left, self.left[cur], self.right[cur])
            active = self.feature[nodes] >= 0
        return nodes

    def _proba_present(self, x):
        counts = self.value[self.apply(x)]
        return counts / counts.sum(axis=1, keepdims=True)

    def to_dict(self) -> dict:
        return {
            "feature": self.feature.tolist(),
            "threshold": self.threshold.tolist(),
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "value": self.value.tolist(),
            "n_features": self.n_features,
            "class_count": self.class_count,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TreeModel":
        return cls(d["feature"], d["threshold"], d["left"], d["right"], d["value"],
                   d["n_features"], d["class_count"])


def fit_decision_tree(train: TrainSet, max_depth: int = None) -> TreeModel:
    x, y, n_classes = train.features, train.labels, train.class_count
    feature, threshold, left, right, value = [], [], [], [], []

    def new_node(rows):
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        value.append(np.bincount(y[rows], minlength=n_classes).astype(float))
        return len(feature) - 1

    root = new_node(np.arange(y.size))
    stack = [(root, np.arange(y.size), 0)]
    while stack:
        node, rows, depth = stack.pop()
        if rows.size < 2 or np.count_nonzero(value[node]) <= 1:
            continue
        if max_depth is not None and depth >= max_depth:
            continue
        split = best_split(x[rows], y[rows], n_classes)
        if split is None:  # all feature vectors identical
            continue
        j, thr, _ = split
        mask = x[rows, j] <= thr
        feature[node], threshold[node] = j, thr
        left[node] = new_node(rows[mask])
        right[node] = new_node(rows[~mask])
        stack.append((right[node], rows[~mask], depth + 1))
        stack.append((left[node], rows[mask], depth + 1))
    return TreeModel(feature, threshold, left, right, value, train.n_features, n_classes)
