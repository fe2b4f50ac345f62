"""Trainable classifiers used as stacking poolers, implemented on numpy."""
from .base import DegenerateLabelsError, Learner, NonConvergenceWarning, SizeGuardError, TrainSet
from .cnb import CnbModel, NegativeFeatureError, fit_complement_nb
from .gp import GpModel, fit_gp_classifier
from .knn import KnnModel, fit_knn
from .logreg import LogRegModel, fit_logistic_regression
from .svm import SvmModel, fit_svm
from .tree import TreeModel, fit_decision_tree

MODEL_TYPES = {cls.kind: cls for cls in (TreeModel, LogRegModel, CnbModel, SvmModel, KnnModel, GpModel)}


def predict_proba(model: Learner, features):
    """Class probabilities for each row of ``features``; rows sum to 1."""
    return model.predict_proba(features)


def model_to_dict(model: Learner) -> dict:
    return {"type": model.kind, **model.to_dict()}


def model_from_dict(data: dict) -> Learner:
    data = dict(data)
    kind = data.pop("type")
    if kind not in MODEL_TYPES:
        raise ValueError(f"unknown learner type {kind!r}")
    return MODEL_TYPES[kind].from_dict(data)


__all__ = [
    "CnbModel", "DegenerateLabelsError", "GpModel", "KnnModel", "Learner", "LogRegModel",
    "NegativeFeatureError", "NonConvergenceWarning", "SizeGuardError", "SvmModel", "TrainSet",
    "TreeModel", "fit_complement_nb", "fit_decision_tree", "fit_gp_classifier", "fit_knn",
    "fit_logistic_regression", "fit_svm", "model_from_dict", "model_to_dict", "predict_proba",
]
