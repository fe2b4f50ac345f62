"""Domain types shared across the package.

Everything here is an immutable value: numpy arrays stored on these types are
marked read-only at construction so they can be shared between threads.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence, Union

import numpy as np

EPS_NORM = 1e-6
EPS_INGEST = 1e-3


class EnsemblePoolError(Exception):
    """Base class for all errors raised by this package."""


class AlignmentError(EnsemblePoolError):
    pass


class NormalizationError(EnsemblePoolError):
    pass


class LabelMismatchError(EnsemblePoolError):
    pass


class DegenerateError(EnsemblePoolError):
    pass


class ShapeMismatchError(EnsemblePoolError):
    pass


def _frozen(array, dtype=float) -> np.ndarray:
    out = np.array(array, dtype=dtype, copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True, eq=False)
class ClassProbabilities:
    """A single class-probability vector.

    ``degenerate`` marks Global Argmax rows, which keep one nonzero entry and
    are not renormalized.
    """

    values: np.ndarray
    degenerate: bool = False

    def __post_init__(self):
        values = _frozen(self.values)
        object.__setattr__(self, "values", values)
        if values.ndim != 1 or values.size == 0:
            raise ShapeMismatchError("class probabilities must be a non-empty vector")
        if np.any(values < 0) or np.any(values > 1):
            raise NormalizationError(f"entries outside [0, 1]: {values}")
        if self.degenerate:
            nonzero = np.count_nonzero(values)
            if nonzero != 1:
                raise NormalizationError("degenerate row must have exactly one nonzero entry")
        elif abs(values.sum() - 1.0) > EPS_NORM:
            raise NormalizationError(f"row sums to {values.sum()!r}")

    def __len__(self):
        return self.values.size


def renormalize(probs: Union[ClassProbabilities, Sequence[float], np.ndarray]) -> ClassProbabilities:
    """Divide a non-negative vector by its sum."""
    values = np.asarray(probs.values if isinstance(probs, ClassProbabilities) else probs, dtype=float)
    if np.any(values < 0):
        raise NormalizationError("negative entries cannot be renormalized")
    total = values.sum()
    if total <= 0:
        raise DegenerateError("all entries are zero")
    return ClassProbabilities(values / total)


def normalize_rows(values: np.ndarray) -> np.ndarray:
    """Row-wise renormalization of an (N, C) array; raises on all-zero rows."""
    values = np.asarray(values, dtype=float)
    sums = values.sum(axis=1, keepdims=True)
    if np.any(sums <= 0):
        raise DegenerateError("cannot renormalize an all-zero row")
    return values / sums


@dataclass(frozen=True, eq=False)
class PredictionMatrix:
    """Per-sample class-probability rows keyed by opaque sample ids."""

    sample_ids: tuple
    values: np.ndarray
    degenerate: bool = False

    def __post_init__(self):
        ids = tuple(str(s) for s in self.sample_ids)
        values = _frozen(self.values)
        if values.ndim != 2:
            raise ShapeMismatchError(f"expected a 2-D array, got shape {values.shape}")
        if values.shape[0] != len(ids):
            raise ShapeMismatchError(f"{len(ids)} sample ids for {values.shape[0]} rows")
        if values.shape[1] < 1:
            raise ShapeMismatchError("class count must be at least 1")
        if len(set(ids)) != len(ids):
            raise AlignmentError("sample ids are not unique")
        object.__setattr__(self, "sample_ids", ids)
        object.__setattr__(self, "values", values)

    @property
    def n_samples(self) -> int:
        return self.values.shape[0]

    @property
    def class_count(self) -> int:
        return self.values.shape[1]

    def row(self, i: int) -> ClassProbabilities:
        return ClassProbabilities(self.values[i], degenerate=self.degenerate)

    def check_normalized(self, tol: float = EPS_NORM) -> None:
        if np.any(~np.isfinite(self.values)) or np.any(self.values < 0) or np.any(self.values > 1 + tol):
            raise NormalizationError("probabilities must be finite and within [0, 1]")
        if self.degenerate:
            if np.any(np.count_nonzero(self.values, axis=1) != 1):
                raise NormalizationError("degenerate rows need exactly one nonzero entry")
            return
        deviation = np.abs(self.values.sum(axis=1) - 1.0)
        if deviation.size and deviation.max() > tol:
            bad = int(np.argmax(deviation))
            raise NormalizationError(
                f"row {self.sample_ids[bad]!r} sums to {self.values[bad].sum()!r}"
            )

    def take(self, sample_ids: Iterable[str]) -> "PredictionMatrix":
        index = {s: i for i, s in enumerate(self.sample_ids)}
        ids = list(sample_ids)
        try:
            rows = [index[s] for s in ids]
        except KeyError as exc:
            raise AlignmentError(f"unknown sample id {exc.args[0]!r}") from None
        return PredictionMatrix(ids, self.values[rows], self.degenerate)


class SourceKind(str, enum.Enum):
    ARCHITECTURE = "architecture"
    FOLD = "fold"
    AUGMENTED_COPY = "augmented_copy"


@dataclass(frozen=True)
class Member:
    name: str
    source_kind: SourceKind
    matrix: PredictionMatrix


@dataclass(frozen=True, eq=False)
class EnsembleBundle:
    """M prediction matrices over the same samples, in member order."""

    members: tuple

    def __post_init__(self):
        members = tuple(self.members)
        if not members:
            raise ShapeMismatchError("a bundle needs at least one member")
        object.__setattr__(self, "members", members)

    @classmethod
    def from_matrices(cls, matrices: Sequence[PredictionMatrix], names=None,
                      source_kind=SourceKind.ARCHITECTURE) -> "EnsembleBundle":
        names = names or [f"member_{i}" for i in range(len(matrices))]
        return cls(tuple(Member(n, SourceKind(source_kind), m) for n, m in zip(names, matrices)))

    @property
    def member_count(self) -> int:
        return len(self.members)

    @property
    def sample_ids(self) -> tuple:
        return self.members[0].matrix.sample_ids

    @property
    def class_count(self) -> int:
        return self.members[0].matrix.class_count

    @property
    def n_samples(self) -> int:
        return self.members[0].matrix.n_samples

    def stack(self) -> np.ndarray:
        """Return an (M, N, C) array of member probabilities."""
        return np.stack([m.matrix.values for m in self.members])

    def features(self) -> np.ndarray:
        """Concatenate members per sample, member-major: shape (N, M*C)."""
        return np.concatenate([m.matrix.values for m in self.members], axis=1)

    def take(self, sample_ids: Iterable[str]) -> "EnsembleBundle":
        ids = list(sample_ids)
        return EnsembleBundle(tuple(Member(m.name, m.source_kind, m.matrix.take(ids)) for m in self.members))


@dataclass(frozen=True, eq=False)
class LabelVector:
    sample_ids: tuple
    labels: np.ndarray
    class_count: int = None

    def __post_init__(self):
        ids = tuple(str(s) for s in self.sample_ids)
        labels = _frozen(self.labels, dtype=np.int64)
        if labels.ndim != 1 or labels.size != len(ids):
            raise ShapeMismatchError("labels must be a vector aligned with sample ids")
        if len(set(ids)) != len(ids):
            raise AlignmentError("sample ids are not unique")
        class_count = self.class_count
        if class_count is None:
            class_count = int(labels.max()) + 1 if labels.size else 0
        if labels.size and (labels.min() < 0 or labels.max() >= class_count):
            raise LabelMismatchError(f"labels must lie in [0, {class_count})")
        object.__setattr__(self, "sample_ids", ids)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "class_count", int(class_count))

    def __len__(self):
        return len(self.sample_ids)

    def take(self, sample_ids: Iterable[str]) -> "LabelVector":
        index = {s: i for i, s in enumerate(self.sample_ids)}
        ids = list(sample_ids)
        try:
            rows = [index[s] for s in ids]
        except KeyError as exc:
            raise LabelMismatchError(f"no label for sample {exc.args[0]!r}") from None
        return LabelVector(ids, self.labels[rows], self.class_count)

    def counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.class_count)


class Partition(str, enum.Enum):
    MODEL_TRAIN = "model-train"
    MODEL_VAL = "model-val"
    ENSEMBLE_TRAIN = "ensemble-train"
    TESTING = "testing"


class FoldRole(str, enum.Enum):
    FOLD_TRAIN = "fold-train"
    FOLD_VAL = "fold-val"


@dataclass(frozen=True)
class FoldMember:
    fold_index: int
    role: FoldRole


@dataclass(frozen=True, eq=False)
class SplitAssignment:
    """Maps every sample id to a partition or to a fold role."""

    assignment: Mapping

    def __post_init__(self):
        object.__setattr__(self, "assignment", dict(self.assignment))

    def __eq__(self, other):
        return isinstance(other, SplitAssignment) and self.assignment == other.assignment

    def __len__(self):
        return len(self.assignment)

    def ids_where(self, *roles) -> list:
        """Sample ids (in insertion order) whose role is one of ``roles``.

        Fold roles match any fold index.
        """
        wanted = set(roles)
        out = []
        for sample_id, role in self.assignment.items():
            key = role.role if isinstance(role, FoldMember) else role
            if key in wanted:
                out.append(sample_id)
        return out

    def counts(self) -> dict:
        out = {}
        for role in self.assignment.values():
            key = role.role if isinstance(role, FoldMember) else role
            out[key] = out.get(key, 0) + 1
        return out

    @property
    def is_fold(self) -> bool:
        return any(isinstance(r, FoldMember) for r in self.assignment.values())

    def training_ids(self) -> list:
        return self.ids_where(FoldRole.FOLD_TRAIN) if self.is_fold else self.ids_where(Partition.MODEL_TRAIN)

    def validation_ids(self) -> list:
        return self.ids_where(FoldRole.FOLD_VAL) if self.is_fold else self.ids_where(Partition.MODEL_VAL)


@dataclass(frozen=True, eq=False)
class ClassWeights:
    weights: np.ndarray = field()

    def __post_init__(self):
        weights = _frozen(self.weights)
        if weights.ndim != 1 or np.any(~(weights > 0)):
            raise ValueError("class weights must be a vector of positive reals")
        object.__setattr__(self, "weights", weights)

    def __len__(self):
        return self.weights.size


def validate_bundle(bundle: EnsembleBundle, labels: LabelVector = None,
                    tol: float = EPS_NORM) -> EnsembleBundle:
    """Check member alignment and row normalization; return ``bundle`` unchanged.

    Raises AlignmentError on sample-id or class-count mismatch, NormalizationError
    on rows whose sum deviates by more than ``tol``, and LabelMismatchError when
    ``labels`` do not cover exactly the bundle's samples in order.
    """
    first = bundle.members[0].matrix
    for member in bundle.members[1:]:
        m = member.matrix
        if m.sample_ids != first.sample_ids:
            raise AlignmentError(f"member {member.name!r} sample ids differ from {bundle.members[0].name!r}")
        if m.class_count != first.class_count:
            raise AlignmentError(
                f"member {member.name!r} has {m.class_count} classes, expected {first.class_count}"
            )
    for member in bundle.members:
        member.matrix.check_normalized(tol)
    if labels is not None:
        if tuple(labels.sample_ids) != first.sample_ids:
            raise LabelMismatchError("label sample ids do not match the bundle")
        if labels.class_count > first.class_count:
            raise LabelMismatchError("labels reference more classes than the predictions carry")
    return bundle
