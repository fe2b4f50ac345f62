from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from ..core import EnsemblePoolError, ShapeMismatchError


class DegenerateLabelsError(EnsemblePoolError):
    """Training data with fewer than two distinct labels."""


class NonConvergenceWarning(UserWarning):
    pass


class SizeGuardError(EnsemblePoolError):
    pass


@dataclass(frozen=True, eq=False)
class TrainSet:
    features: np.ndarray
    labels: np.ndarray
    class_count: int = None

    def __post_init__(self):
        x = np.array(self.features, dtype=float)
        y = np.array(self.labels, dtype=np.int64)
        if x.ndim != 2 or y.ndim != 1 or x.shape[0] != y.size:
            raise ShapeMismatchError(f"features {x.shape} do not match labels {y.shape}")
        if y.size < 2 or np.unique(y).size < 2:
            raise DegenerateLabelsError("need at least 2 samples and 2 distinct labels")
        if y.min() < 0:
            raise ValueError("labels must be non-negative class indices")
        c = int(y.max()) + 1 if self.class_count is None else int(self.class_count)
        if y.max() >= c:
            raise ValueError(f"labels must lie in [0, {c})")
        x.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "features", x)
        object.__setattr__(self, "labels", y)
        object.__setattr__(self, "class_count", c)

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    @property
    def present_classes(self) -> np.ndarray:
        return np.unique(self.labels)

    def encoded_labels(self) -> np.ndarray:
        """Labels re-indexed into ``0..len(present_classes)-1``."""
        return np.searchsorted(self.present_classes, self.labels)


class Learner:
    """Common query checks and class bookkeeping for fitted models.

    Subclasses set ``n_features``, ``class_count`` and ``classes`` (the label
    values seen during training) and implement ``_proba_present`` returning
    probabilities over ``classes`` only; absent classes get probability 0.
    """

    kind = None
    n_features: int
    class_count: int
    classes: np.ndarray

    def _check_query(self, features) -> np.ndarray:
        x = np.asarray(features, dtype=float)
        if x.ndim != 2 or x.shape[1] != self.n_features:
            raise ShapeMismatchError(f"model expects {self.n_features} features, got array of shape {x.shape}")
        return x

    def predict_proba(self, features) -> np.ndarray:
        x = self._check_query(features)
        present = self._proba_present(x)
        out = np.zeros((x.shape[0], self.class_count))
        out[:, self.classes] = present
        return out / out.sum(axis=1, keepdims=True)

    def predict(self, features) -> np.ndarray:
        return np.argmax(self.predict_proba(features), axis=1)

    def _proba_present(self, x):  # pragma: no cover - abstract
        raise NotImplementedError


def warn_nonconvergence(what: str) -> None:
    warnings.warn(f"{what} did not converge", NonConvergenceWarning, stacklevel=3)
