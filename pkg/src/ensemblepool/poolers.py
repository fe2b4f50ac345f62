"""The twelve pooling functions that reduce an ensemble bundle to one prediction.

Static kinds combine member rows directly. BestModel and MeanWeighted score
members by macro-F1 on labelled ensemble-train predictions. The six trainable
kinds fit a learner on the member-major concatenation of member probabilities.
All ties resolve to the lowest class index, then the lowest member index.
"""
from __future__ import annotations

import enum
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.special import softmax

from . import learners
from .core import (
    EnsembleBundle,
    EnsemblePoolError,
    LabelVector,
    PredictionMatrix,
    ShapeMismatchError,
    validate_bundle,
)
from .learners import DegenerateLabelsError, TrainSet
from .metrics import macro_f1

SCHEMA_VERSION = 1


class WeightShapeError(EnsemblePoolError):
    pass


class AllZeroF1Warning(UserWarning):
    """Every member scored macro-F1 0; MeanWeighted falls back to uniform weights."""


class PoolerKind(str, enum.Enum):
    BEST_MODEL = "best-model"
    DECISION_TREE = "decision-tree"
    GAUSSIAN_PROCESS = "gaussian-process"
    GLOBAL_ARGMAX = "global-argmax"
    LOGISTIC_REGRESSION = "logistic-regression"
    MAJORITY_VOTE_HARD = "majority-vote-hard"
    MAJORITY_VOTE_SOFT = "majority-vote-soft"
    MEAN_UNWEIGHTED = "mean-unweighted"
    MEAN_WEIGHTED = "mean-weighted"
    NAIVE_BAYES_COMPLEMENT = "naive-bayes-complement"
    SUPPORT_VECTOR_MACHINE = "support-vector-machine"
    K_NEAREST_NEIGHBORS = "k-nearest-neighbors"


STATIC_KINDS = frozenset({
    PoolerKind.GLOBAL_ARGMAX,
    PoolerKind.MAJORITY_VOTE_HARD,
    PoolerKind.MAJORITY_VOTE_SOFT,
    PoolerKind.MEAN_UNWEIGHTED,
})

TRAINERS = {
    PoolerKind.DECISION_TREE: learners.fit_decision_tree,
    PoolerKind.GAUSSIAN_PROCESS: learners.fit_gp_classifier,
    PoolerKind.LOGISTIC_REGRESSION: learners.fit_logistic_regression,
    PoolerKind.NAIVE_BAYES_COMPLEMENT: learners.fit_complement_nb,
    PoolerKind.SUPPORT_VECTOR_MACHINE: learners.fit_svm,
    PoolerKind.K_NEAREST_NEIGHBORS: learners.fit_knn,
}


def needs_fitting(kind) -> bool:
    return PoolerKind(kind) not in STATIC_KINDS


@dataclass(frozen=True, eq=False)
class FittedPooler:
    kind: PoolerKind
    member_count: int = None
    class_count: int = None
    weights: np.ndarray = None
    best_index: int = None
    learner: learners.Learner = None

    def to_dict(self) -> dict:
        state = None
        if self.weights is not None:
            state = {"model_weights": np.asarray(self.weights).tolist()}
        elif self.best_index is not None:
            state = {"best_index": int(self.best_index)}
        elif self.learner is not None:
            state = {"learner": learners.model_to_dict(self.learner)}
        return {
            "schema_version": SCHEMA_VERSION,
            "kind": self.kind.value,
            "member_count": self.member_count,
            "class_count": self.class_count,
            "state": state,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "FittedPooler":
        if data.get("schema_version") != SCHEMA_VERSION:
            raise ValueError(f"unsupported pooler schema version {data.get('schema_version')!r}")
        state = data.get("state") or {}
        learner = state.get("learner")
        return cls(
            kind=PoolerKind(data["kind"]),
            member_count=data.get("member_count"),
            class_count=data.get("class_count"),
            weights=np.asarray(state["model_weights"], dtype=float) if "model_weights" in state else None,
            best_index=state.get("best_index"),
            learner=learners.model_from_dict(learner) if learner is not None else None,
        )


def member_f1_scores(bundle: EnsembleBundle, labels: LabelVector) -> np.ndarray:
    return np.array([macro_f1(m.matrix, labels) for m in bundle.members])


def fit_pooler(kind, bundle: EnsembleBundle, labels: LabelVector = None, **learner_params) -> FittedPooler:
    """Fit a pooler of ``kind`` on ensemble-train predictions and labels.

    ``learner_params`` are forwarded to the learner's fit function for the
    trainable kinds (e.g. ``k`` for nearest neighbours).
    """
    kind = PoolerKind(kind)
    if kind in STATIC_KINDS:
        return FittedPooler(kind)
    if labels is None:
        raise ValueError(f"{kind.value} needs labels to fit")
    validate_bundle(bundle, labels)
    shape = dict(kind=kind, member_count=bundle.member_count, class_count=bundle.class_count)

    if kind is PoolerKind.BEST_MODEL:
        scores = member_f1_scores(bundle, labels)
        return FittedPooler(best_index=int(np.argmax(scores)), **shape)
    if kind is PoolerKind.MEAN_WEIGHTED:
        scores = member_f1_scores(bundle, labels)
        if scores.sum() <= 0:
            warnings.warn("all members have macro-F1 0; using uniform weights", AllZeroF1Warning, stacklevel=2)
            scores = np.ones_like(scores)
        return FittedPooler(weights=scores / scores.sum(), **shape)

    if np.unique(labels.labels).size < 2:
        raise DegenerateLabelsError(f"{kind.value} needs at least two distinct labels")
    train = TrainSet(bundle.features(), labels.labels, bundle.class_count)
    return FittedPooler(learner=TRAINERS[kind](train, **learner_params), **shape)


def pool_mean_unweighted(bundle: EnsembleBundle) -> PredictionMatrix:
    # running mean: identical members reproduce their rows bit for bit
    stacked = bundle.stack()
    mean = stacked[0].copy()
    for k in range(1, stacked.shape[0]):
        mean += (stacked[k] - mean) / (k + 1)
    return PredictionMatrix(bundle.sample_ids, mean)


def pool_mean_weighted(bundle: EnsembleBundle, weights) -> PredictionMatrix:
    w = np.asarray(weights, dtype=float)
    if w.shape != (bundle.member_count,):
        raise WeightShapeError(f"expected {bundle.member_count} weights, got shape {w.shape}")
    if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-9:
        raise WeightShapeError("weights must be non-negative and sum to 1")
    return PredictionMatrix(bundle.sample_ids, np.tensordot(w, bundle.stack(), axes=1))


def pool_majority_vote_hard(bundle: EnsembleBundle) -> PredictionMatrix:
    stacked = bundle.stack()
    votes = np.argmax(stacked, axis=2)  # (M, N)
    n, c = stacked.shape[1], stacked.shape[2]
    tally = np.zeros((n, c), dtype=np.int64)
    for member_votes in votes:
        tally[np.arange(n), member_votes] += 1
    return PredictionMatrix(bundle.sample_ids, np.eye(c)[np.argmax(tally, axis=1)])


def pool_majority_vote_soft(bundle: EnsembleBundle) -> PredictionMatrix:
    # summed probabilities are used directly as softmax logits
    return PredictionMatrix(bundle.sample_ids, softmax(bundle.stack().sum(axis=0), axis=1))


def pool_global_argmax(bundle: EnsembleBundle) -> PredictionMatrix:
    stacked = bundle.stack()
    m, n, c = stacked.shape
    # class-major flattening so argmax picks the lowest class, then lowest member
    flat = stacked.transpose(1, 2, 0).reshape(n, c * m)
    winner = np.argmax(flat, axis=1)
    out = np.zeros((n, c))
    out[np.arange(n), winner // m] = flat[np.arange(n), winner]
    return PredictionMatrix(bundle.sample_ids, out, degenerate=True)


def pool_trained(pooler: FittedPooler, bundle: EnsembleBundle) -> PredictionMatrix:
    features = bundle.features()
    if features.shape[1] != pooler.learner.n_features:
        raise ShapeMismatchError(
            f"pooler was fitted on {pooler.learner.n_features} features, bundle provides {features.shape[1]}"
        )
    proba = pooler.learner.predict_proba(features)
    return PredictionMatrix(bundle.sample_ids, proba / proba.sum(axis=1, keepdims=True))


_STATIC = {
    PoolerKind.MEAN_UNWEIGHTED: pool_mean_unweighted,
    PoolerKind.MAJORITY_VOTE_HARD: pool_majority_vote_hard,
    PoolerKind.MAJORITY_VOTE_SOFT: pool_majority_vote_soft,
    PoolerKind.GLOBAL_ARGMAX: pool_global_argmax,
}


def pool(pooler: FittedPooler, bundle: EnsembleBundle) -> PredictionMatrix:
    """Apply a (fitted) pooler to a bundle; returns one row per sample."""
    kind = pooler.kind
    if kind in STATIC_KINDS:
        return _STATIC[kind](bundle)
    if bundle.member_count != pooler.member_count:
        raise ShapeMismatchError(f"pooler expects {pooler.member_count} members, got {bundle.member_count}")
    if bundle.class_count != pooler.class_count:
        raise ShapeMismatchError(f"pooler expects {pooler.class_count} classes, got {bundle.class_count}")
    if kind is PoolerKind.BEST_MODEL:
        return bundle.members[pooler.best_index].matrix
    if kind is PoolerKind.MEAN_WEIGHTED:
        return pool_mean_weighted(bundle, pooler.weights)
    return pool_trained(pooler, bundle)
