"""Pooling functions, ensemble strategies and metrics for class-probability ensembles."""
from .core import (
    ClassProbabilities,
    ClassWeights,
    EnsembleBundle,
    LabelVector,
    Member,
    Partition,
    PredictionMatrix,
    SourceKind,
    SplitAssignment,
    renormalize,
    validate_bundle,
)
from .metrics import MetricReport, evaluate
from .poolers import FittedPooler, PoolerKind, fit_pooler, pool

__version__ = "0.1.0"
