"""Complement naive Bayes with weight normalization (Rennie et al., 2003)."""
from __future__ import annotations

import numpy as np
from scipy.special import softmax

from ..core import EnsemblePoolError
from .base import Learner, TrainSet


class NegativeFeatureError(EnsemblePoolError):
    pass


class CnbModel(Learner):
    kind = "complement_nb"

    def __init__(self, log_weights, classes, class_count, complement_counts=None):
        self.log_weights = np.asarray(log_weights, dtype=float)
        self.classes = np.asarray(classes, dtype=np.int64)
        self.class_count = int(class_count)
        self.n_features = self.log_weights.shape[1]
        self.complement_counts = complement_counts

    def scores(self, features) -> np.ndarray:
        """Per present class ``sum_i x_i * w_ci``; the predicted class has the smallest score."""
        x = self._check_query(features)
        if np.any(x < 0):
            raise NegativeFeatureError("complement naive Bayes needs non-negative features")
        return x @ self.log_weights.T

    def _proba_present(self, x):
        return softmax(-self.scores(x), axis=1)

    def to_dict(self) -> dict:
        return {
            "log_weights": self.log_weights.tolist(),
            "classes": self.classes.tolist(),
            "class_count": self.class_count,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CnbModel":
        return cls(np.asarray(d["log_weights"], dtype=float).reshape(len(d["classes"]), -1),
                   d["classes"], d["class_count"])


def fit_complement_nb(train: TrainSet, alpha: float = 1.0) -> CnbModel:
    x = train.features
    if np.any(x < 0):
        raise NegativeFeatureError("complement naive Bayes needs non-negative features")
    y = train.encoded_labels()
    k = train.present_classes.size
    n_features = x.shape[1]

    per_class = np.zeros((k, n_features))
    np.add.at(per_class, y, x)
    complement = per_class.sum(axis=0) - per_class
    theta = (alpha + complement) / (alpha * n_features + complement.sum(axis=1, keepdims=True))
    w = np.log(theta)
    norm = np.abs(w).sum(axis=1, keepdims=True)
    # a single feature gives theta == 1 and w == 0; leave those rows at zero
    w = np.divide(w, norm, out=np.zeros_like(w), where=norm > 0)
    return CnbModel(w, train.present_classes, train.class_count, complement_counts=complement)
