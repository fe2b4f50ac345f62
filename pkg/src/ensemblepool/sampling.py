"""Dataset partitioning: the four-way percentage split, stratified k-fold
cross-validation over the model-train/model-val pool, and balanced class weights.
"""
from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .core import (
    ClassWeights,
    EnsemblePoolError,
    FoldMember,
    FoldRole,
    LabelVector,
    Partition,
    SplitAssignment,
)

PARTITION_ORDER = (Partition.MODEL_TRAIN, Partition.MODEL_VAL, Partition.ENSEMBLE_TRAIN, Partition.TESTING)


class TooFewSamplesError(EnsemblePoolError):
    pass


class EmptyClassError(EnsemblePoolError):
    pass


@dataclass(frozen=True)
class SplitRatios:
    model_train: float = 0.65
    model_val: float = 0.10
    ensemble_train: float = 0.10
    testing: float = 0.15

    def __post_init__(self):
        values = self.as_tuple()
        if any(not 0 < v < 1 for v in values):
            raise ValueError(f"split ratios must lie in (0, 1): {values}")
        if abs(sum(values) - 1.0) > 1e-9:
            raise ValueError(f"split ratios must sum to 1, got {sum(values)!r}")

    def as_tuple(self) -> tuple:
        return (self.model_train, self.model_val, self.ensemble_train, self.testing)


@dataclass(frozen=True)
class KFoldSpec:
    k: int = 5
    seed: int = 0

    def __post_init__(self):
        if self.k < 2:
            raise ValueError("k must be at least 2")


def largest_remainder(n: int, ratios) -> list:
    """Split ``n`` items by ``ratios`` with floors plus largest-remainder top-up.

    Ties in the fractional remainder go to the earlier partition. Arithmetic is
    exact: ratios are converted to nearby rationals first, so 0.1 and 0.10 tie.
    """
    exact = [Fraction(r).limit_denominator(10**9) for r in ratios]
    total = sum(exact)
    shares = [n * r / total for r in exact]
    counts = [int(s) for s in shares]  # floor; shares are non-negative
    leftover = n - sum(counts)
    order = sorted(range(len(shares)), key=lambda i: (-(shares[i] - counts[i]), i))
    for i in order[:leftover]:
        counts[i] += 1
    return counts


def _class_members(labels: LabelVector) -> list:
    ids = np.array(labels.sample_ids, dtype=object)
    return [list(ids[labels.labels == c]) for c in range(labels.class_count)]


def percentage_split(labels: LabelVector, ratios: SplitRatios = SplitRatios(), seed: int = 0,
                     stratified: bool = True) -> SplitAssignment:
    """Partition samples into model-train / model-val / ensemble-train / testing.

    With ``stratified`` each class is shuffled and split on its own, so every
    partition's class mix follows the dataset's. The result is a pure function
    of (labels, ratios, seed).
    """
    rng = np.random.default_rng(seed)
    if stratified:
        groups = _class_members(labels)
        for c, group in enumerate(groups):
            if 0 < len(group) < 4:
                raise TooFewSamplesError(f"class {c} has {len(group)} samples; stratification needs at least 4")
    else:
        groups = [list(labels.sample_ids)]

    assignment = {}
    for group in groups:
        if not group:
            continue
        order = rng.permutation(len(group))
        counts = largest_remainder(len(group), ratios.as_tuple())
        start = 0
        for partition, count in zip(PARTITION_ORDER, counts):
            for i in order[start:start + count]:
                assignment[group[i]] = partition
            start += count
    # keep the dataset's sample order in the mapping
    return SplitAssignment({s: assignment[s] for s in labels.sample_ids})


def kfold_split(labels: LabelVector, base: SplitAssignment, spec: KFoldSpec = KFoldSpec()) -> list:
    """Stratified k-fold over the union of model-train and model-val.

    Samples of each class are shuffled and dealt round-robin onto the folds,
    continuing where the previous class stopped so fold sizes differ by at most
    one overall. Ensemble-train and testing assignments are carried over.
    """
    if base.is_fold:
        raise ValueError("base must be a four-way percentage split")
    pool = set(base.ids_where(Partition.MODEL_TRAIN, Partition.MODEL_VAL))
    rng = np.random.default_rng(spec.seed)
    dealt = []
    for c, group in enumerate(_class_members(labels)):
        members = [s for s in group if s in pool]
        if 0 < len(members) < spec.k:
            raise TooFewSamplesError(f"class {c} has {len(members)} samples in the CV pool; k = {spec.k}")
        dealt.extend(members[i] for i in rng.permutation(len(members)))
    fold_of = {s: i % spec.k for i, s in enumerate(dealt)}

    folds = []
    for fold in range(spec.k):
        assignment = {}
        for sample_id in labels.sample_ids:
            if sample_id in fold_of:
                role = FoldRole.FOLD_VAL if fold_of[sample_id] == fold else FoldRole.FOLD_TRAIN
                assignment[sample_id] = FoldMember(fold, role)
            else:
                assignment[sample_id] = base.assignment[sample_id]
        folds.append(SplitAssignment(assignment))
    return folds


def compute_class_weights(labels: LabelVector, split: SplitAssignment) -> ClassWeights:
    """Balanced inverse-frequency weights ``N_train / (C * n_c)`` on the training partition."""
    train = labels.take(split.training_ids())
    counts = train.counts()
    if np.any(counts == 0):
        missing = [int(c) for c in np.flatnonzero(counts == 0)]
        raise EmptyClassError(f"classes {missing} are absent from the training partition")
    return ClassWeights(len(train) / (labels.class_count * counts))
