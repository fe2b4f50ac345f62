from __future__ import annotations

import numpy as np

from .base import Learner, TrainSet


class KnnModel(Learner):
    """Stores the training set; queries vote among the k nearest rows (Euclidean)."""

    kind = "knn"

    def __init__(self, features, labels, k, class_count):
        if int(k) < 1:
            raise ValueError("k must be at least 1")
        self.features = np.asarray(features, dtype=float)
        self.labels = np.asarray(labels, dtype=np.int64)
        self.k = int(k)
        self.class_count = int(class_count)
        self.n_features = self.features.shape[1]
        self.classes = np.arange(self.class_count)

    def neighbors(self, features) -> np.ndarray:
        """Indices of the k nearest training rows; equal distances keep training order."""
        x = self._check_query(features)
        k = min(self.k, self.labels.size)
        out = np.empty((x.shape[0], k), dtype=np.int64)
        # exact squared differences (not the dot-product expansion) so duplicates tie at 0
        for start in range(0, x.shape[0], 64):
            chunk = x[start:start + 64]
            dist = np.sum((chunk[:, None, :] - self.features[None, :, :]) ** 2, axis=2)
            out[start:start + 64] = np.argsort(dist, axis=1, kind="stable")[:, :k]
        return out

    def _proba_present(self, x):
        nb = self.labels[self.neighbors(x)]
        counts = np.zeros((x.shape[0], self.class_count))
        np.add.at(counts, (np.arange(x.shape[0])[:, None], nb), 1.0)
        return counts / nb.shape[1]

    def to_dict(self) -> dict:
        return {
            "features": self.features.tolist(),
            "labels": self.labels.tolist(),
            "k": self.k,
            "class_count": self.class_count,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "KnnModel":
        return cls(d["features"], d["labels"], d["k"], d["class_count"])


def fit_knn(train: TrainSet, k: int = 5) -> KnnModel:
    return KnnModel(train.features, train.labels, k, train.class_count)
