"""Classification metrics computed one-vs-rest per class and macro-averaged.

Zero-denominator metrics evaluate to 0.0 and are listed in the report's
``degenerate`` flags instead of producing NaN.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import AlignmentError, EnsemblePoolError, LabelVector, PredictionMatrix


class OneClassError(EnsemblePoolError):
    """ROC analysis needs both positive and negative samples."""


@dataclass(frozen=True, eq=False)
class ConfusionCounts:
    """One-vs-rest confusion counts; each array has one entry per class."""

    tp: np.ndarray
    fp: np.ndarray
    tn: np.ndarray
    fn: np.ndarray

    @property
    def class_count(self) -> int:
        return self.tp.size

    @property
    def n_samples(self) -> int:
        return int(self.tp[0] + self.fp[0] + self.tn[0] + self.fn[0])


def predicted_classes(predictions: PredictionMatrix) -> np.ndarray:
    # np.argmax returns the first maximum, i.e. lowest class index on ties
    return np.argmax(predictions.values, axis=1)


def _check_aligned(predictions: PredictionMatrix, labels: LabelVector) -> None:
    if tuple(predictions.sample_ids) != tuple(labels.sample_ids):
        raise AlignmentError("prediction and label sample ids differ")
    if labels.class_count > predictions.class_count:
        raise AlignmentError("labels reference more classes than the predictions carry")


def confusion(predictions: PredictionMatrix, labels: LabelVector) -> ConfusionCounts:
    _check_aligned(predictions, labels)
    n_classes = predictions.class_count
    pred = predicted_classes(predictions)
    truth = labels.labels
    matrix = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(matrix, (truth, pred), 1)
    tp = np.diag(matrix).copy()
    fp = matrix.sum(axis=0) - tp
    fn = matrix.sum(axis=1) - tp
    tn = truth.size - tp - fp - fn
    return ConfusionCounts(tp, fp, tn, fn)


def _ratio(num, den):
    """Return (value, degenerate) for num/den with 0/0 -> (0.0, True)."""
    if den == 0:
        return 0.0, True
    return float(num) / float(den), False


def accuracy(counts: ConfusionCounts, c: int) -> float:
    return _ratio(counts.tp[c] + counts.tn[c], counts.tp[c] + counts.fp[c] + counts.tn[c] + counts.fn[c])[0]


def f1_with_flag(counts: ConfusionCounts, c: int):
    return _ratio(2 * counts.tp[c], 2 * counts.tp[c] + counts.fp[c] + counts.fn[c])


def sensitivity_with_flag(counts: ConfusionCounts, c: int):
    return _ratio(counts.tp[c], counts.tp[c] + counts.fn[c])


def fpr_with_flag(counts: ConfusionCounts, c: int):
    return _ratio(counts.fp[c], counts.fp[c] + counts.tn[c])


def f1(counts: ConfusionCounts, c: int) -> float:
    return f1_with_flag(counts, c)[0]


def sensitivity(counts: ConfusionCounts, c: int) -> float:
    return sensitivity_with_flag(counts, c)[0]


def fpr(counts: ConfusionCounts, c: int) -> float:
    return fpr_with_flag(counts, c)[0]


def specificity(counts: ConfusionCounts, c: int) -> float:
    return 1.0 - fpr(counts, c)


def macro(values) -> float:
    """Unweighted mean over classes."""
    values = np.asarray(values, dtype=float)
    return float(values.mean())


def macro_f1(predictions: PredictionMatrix, labels: LabelVector) -> float:
    counts = confusion(predictions, labels)
    return macro([f1(counts, c) for c in range(counts.class_count)])


def top_k_error(predictions: PredictionMatrix, labels: LabelVector, k: int) -> float:
    """Fraction of samples whose true class is outside the k best-ranked classes.

    Ranking is by descending probability, equal probabilities ordered by class
    index, so a tie at rank k favours the lower index.
    """
    _check_aligned(predictions, labels)
    n_classes = predictions.class_count
    if not 1 <= k <= n_classes:
        raise ValueError(f"k must be in [1, {n_classes}]")
    # stable sort on -p keeps lower class indices first among equal scores
    ranking = np.argsort(-predictions.values, axis=1, kind="stable")[:, :k]
    hit = np.any(ranking == labels.labels[:, None], axis=1)
    return float(1.0 - hit.mean())


def roc_curve(scores, positives):
    """ROC points from a descending threshold sweep.

    Returns ``(thresholds, fpr, tpr, auc)``. Equal scores are processed as one
    group and yield a single point; the first point is ``(inf, 0, 0)``.
    """
    scores = np.asarray(scores, dtype=float)
    positives = np.asarray(positives, dtype=bool)
    n_pos = int(positives.sum())
    n_neg = positives.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise OneClassError("ROC needs at least one positive and one negative sample")

    order = np.argsort(-scores, kind="stable")
    s = scores[order]
    p = positives[order]
    tp_cum = np.cumsum(p)
    fp_cum = np.cumsum(~p)
    # last index of each group of equal scores
    ends = np.flatnonzero(np.r_[s[1:] != s[:-1], True])
    tps = np.r_[0, tp_cum[ends]].astype(np.int64)
    fps = np.r_[0, fp_cum[ends]].astype(np.int64)
    thresholds = np.r_[np.inf, s[ends]]

    # integer trapezoid sum, doubled, so the only rounding is the final division
    twice_area = int(np.sum((fps[1:] - fps[:-1]) * (tps[1:] + tps[:-1])))
    auc = twice_area / (2.0 * n_pos * n_neg)
    return thresholds, fps / n_neg, tps / n_pos, auc


def roc_auc(scores, positives):
    """Return ``(points, auc)`` where points is an (K, 3) array of threshold, fpr, tpr."""
    thresholds, fpr_, tpr_, auc = roc_curve(scores, positives)
    return np.column_stack([thresholds, fpr_, tpr_]), auc


@dataclass
class MetricReport:
    class_count: int
    n_samples: int
    counts: ConfusionCounts
    per_class: dict
    macro: dict
    top1_error: float
    top3_error: float
    roc: list
    auc: list
    macro_auc: float
    degenerate: dict = field(default_factory=dict)
    errors: list = field(default_factory=list)

    def to_dict(self, include_roc: bool = False) -> dict:
        out = {
            "class_count": self.class_count,
            "n_samples": self.n_samples,
            "confusion": {
                "tp": self.counts.tp.tolist(),
                "fp": self.counts.fp.tolist(),
                "tn": self.counts.tn.tolist(),
                "fn": self.counts.fn.tolist(),
            },
            "per_class": {k: list(v) for k, v in self.per_class.items()},
            "macro": dict(self.macro),
            "top1_error": self.top1_error,
            "top3_error": self.top3_error,
            "auc": list(self.auc),
            "macro_auc": self.macro_auc,
            "degenerate": {k: list(v) for k, v in self.degenerate.items()},
            "errors": list(self.errors),
        }
        if include_roc:
            out["roc"] = [None if pts is None else pts.tolist() for pts in self.roc]
        return out


def evaluate(predictions: PredictionMatrix, labels: LabelVector) -> MetricReport:
    """Compute the full metric suite.

    A class that has no positive (or no negative) sample gets ``None`` AUC and
    an entry in ``errors``; macro AUC averages the classes where it is defined.
    """
    counts = confusion(predictions, labels)
    n_classes = counts.class_count
    per_class = {k: [] for k in ("accuracy", "f1", "sensitivity", "fpr", "specificity")}
    degenerate = {"f1": [], "sensitivity": [], "fpr": []}
    for c in range(n_classes):
        per_class["accuracy"].append(accuracy(counts, c))
        for name, fn in (("f1", f1_with_flag), ("sensitivity", sensitivity_with_flag), ("fpr", fpr_with_flag)):
            value, flag = fn(counts, c)
            per_class[name].append(value)
            if flag:
                degenerate[name].append(c)
        per_class["specificity"].append(1.0 - per_class["fpr"][-1])

    roc, aucs, errors = [], [], []
    for c in range(n_classes):
        try:
            points, auc = roc_auc(predictions.values[:, c], labels.labels == c)
        except OneClassError as exc:
            roc.append(None)
            aucs.append(None)
            errors.append(f"class {c}: OneClassError: {exc}")
        else:
            roc.append(points)
            aucs.append(auc)
    defined = [a for a in aucs if a is not None]

    return MetricReport(
        class_count=n_classes,
        n_samples=counts.n_samples,
        counts=counts,
        per_class=per_class,
        macro={k: macro(v) for k, v in per_class.items()},
        top1_error=top_k_error(predictions, labels, 1),
        top3_error=top_k_error(predictions, labels, min(3, n_classes)),
        roc=roc,
        auc=aucs,
        macro_auc=macro(defined) if defined else None,
        degenerate={k: v for k, v in degenerate.items() if v},
        errors=errors,
    )
