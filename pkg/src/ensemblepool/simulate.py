"""Desk-scale ensemble experiments.

Softmax-regression base learners stand in for CNNs. They train with the
class-weighted focal loss under early stopping with checkpointing, and are
diversified by random feature subsets and initial weights. On top of them
this module runs Baseline, Augmenting (feature-space jitter at test time),
Stacking and Bagging (k-fold) comparisons.
"""
from __future__ import annotations

import enum
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields

import numpy as np
from scipy.special import softmax

from .core import (
    ClassWeights,
    EnsembleBundle,
    EnsemblePoolError,
    LabelVector,
    Member,
    Partition,
    PredictionMatrix,
    SourceKind,
    SplitAssignment,
)
from .metrics import MetricReport, evaluate
from .poolers import PoolerKind, fit_pooler, pool, pool_mean_unweighted
from .sampling import KFoldSpec, SplitRatios, compute_class_weights, kfold_split, largest_remainder, percentage_split

P_MIN = 1e-12


class ConfigError(EnsemblePoolError):
    pass


class DegenerateSplitError(EnsemblePoolError):
    pass


class Scenario(str, enum.Enum):
    BASELINE = "baseline"
    AUGMENTING = "augmenting"
    STACKING = "stacking"
    BAGGING = "bagging"


@dataclass(frozen=True)
class SyntheticSpec:
    n_samples: int = 5000
    n_classes: int = 8
    n_features: int = 24
    class_separation: float = 3.0
    label_noise: float = 0.1
    imbalance: tuple = None
    seed: int = 0

    def __post_init__(self):
        if self.n_classes < 2:
            raise ConfigError("n_classes: need at least 2 classes")
        if self.n_features < 1:
            raise ConfigError("n_features: must be positive")
        if self.n_samples < 4 * self.n_classes:
            raise ConfigError("n_samples: need at least 4 samples per class")
        if not self.class_separation > 0:
            raise ConfigError("class_separation: must be positive")
        if not 0 <= self.label_noise < 0.5:
            raise ConfigError("label_noise: must lie in [0, 0.5)")
        if self.imbalance is not None:
            props = tuple(float(p) for p in self.imbalance)
            if len(props) != self.n_classes or any(p < 0 for p in props) or abs(sum(props) - 1) > 1e-9:
                raise ConfigError("imbalance: need one non-negative proportion per class, summing to 1")
            object.__setattr__(self, "imbalance", props)


@dataclass(frozen=True)
class BaseLearnerSpec:
    member_name: str
    feature_subset_fraction: float = 1.0
    init_seed: int = 0
    learning_rate: float = 0.5
    max_epochs: int = 1000
    patience: int = 15

    def __post_init__(self):
        if not 0 < self.feature_subset_fraction <= 1:
            raise ConfigError("feature_subset_fraction: must lie in (0, 1]")
        if self.max_epochs < 1:
            raise ConfigError("max_epochs: must be at least 1")
        if self.patience < 1:
            raise ConfigError("patience: must be at least 1")
        if not self.learning_rate > 0:
            raise ConfigError("learning_rate: must be positive")


@dataclass(frozen=True)
class FocalLossParams:
    alpha: ClassWeights
    gamma: float = 2.0

    def __post_init__(self):
        if self.gamma < 0:
            raise ValueError("gamma must be non-negative")


@dataclass(frozen=True)
class AugmentSpec:
    copies: int = 15
    jitter_sigma: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.copies < 1:
            raise ConfigError("copies: must be at least 1")
        if self.jitter_sigma < 0:
            raise ConfigError("jitter_sigma: must be non-negative")


# --------------------------------------------------------------------------- data

def generate_dataset(spec: SyntheticSpec):
    """Isotropic unit-variance Gaussian blobs, one per class.

    Class centers are ``class_separation / sqrt(2)`` times orthonormal random
    directions (exact pairwise distance when ``n_features >= n_classes``,
    approximate otherwise). Returns ``(features, LabelVector)``.
    """
    rng = np.random.default_rng(spec.seed)
    c, d = spec.n_classes, spec.n_features
    proportions = spec.imbalance or (1.0 / c,) * c
    counts = largest_remainder(spec.n_samples, proportions)

    if d >= c:
        q, _ = np.linalg.qr(rng.standard_normal((d, c)))
        directions = q.T
    else:
        raw = rng.standard_normal((c, d))
        directions = raw / np.linalg.norm(raw, axis=1, keepdims=True)
    centers = directions * (spec.class_separation / np.sqrt(2.0))

    labels = np.repeat(np.arange(c), counts)
    features = centers[labels] + rng.standard_normal((spec.n_samples, d))
    order = rng.permutation(spec.n_samples)
    features, labels = features[order], labels[order]

    n_noisy = int(round(spec.label_noise * spec.n_samples))
    if n_noisy:
        noisy = rng.choice(spec.n_samples, size=n_noisy, replace=False)
        labels[noisy] = rng.integers(0, c, size=n_noisy)

    width = len(str(spec.n_samples - 1))
    ids = [f"s{i:0{width}d}" for i in range(spec.n_samples)]
    return features, LabelVector(ids, labels, c)


# --------------------------------------------------------------------------- loss

def focal_loss(probs, true_class: int, params: FocalLossParams) -> float:
    """``-alpha_t * (1 - p_t)**gamma * log(p_t)`` with p_t clamped at 1e-12."""
    probs = getattr(probs, "values", probs)
    p_t = max(float(probs[true_class]), P_MIN)
    alpha_t = float(params.alpha.weights[true_class])
    return -alpha_t * (1.0 - p_t) ** params.gamma * np.log(p_t)


def _focal_coefficient(p_t, gamma):
    """``gamma (1-p)^(gamma-1) p log p - (1-p)^gamma``, with the p -> 1 limit 0."""
    one_minus = 1.0 - p_t
    log_p = np.log(np.maximum(p_t, P_MIN))
    if gamma == 0:
        return -np.ones_like(p_t)
    with np.errstate(divide="ignore", invalid="ignore"):
        first = np.where(one_minus > 0, gamma * one_minus ** (gamma - 1) * p_t * log_p, 0.0)
    return first - one_minus**gamma


def focal_loss_gradient(logits, true_class: int, params: FocalLossParams) -> np.ndarray:
    """Exact gradient of ``focal_loss(softmax(logits))`` with respect to the logits."""
    logits = np.asarray(logits, dtype=float)
    p = softmax(logits)
    coef = params.alpha.weights[true_class] * _focal_coefficient(np.array(p[true_class]), params.gamma)
    onehot = np.zeros_like(p)
    onehot[true_class] = 1.0
    return coef * (onehot - p)


def batch_focal_loss(logits, labels, alpha, gamma):
    """Mean focal loss over rows and its gradient with respect to the logits."""
    p = softmax(logits, axis=1)
    rows = np.arange(labels.size)
    p_t = p[rows, labels]
    a_t = alpha[labels]
    loss = -a_t * (1.0 - p_t) ** gamma * np.log(np.maximum(p_t, P_MIN))
    coef = a_t * _focal_coefficient(p_t, gamma)
    grad = -p * coef[:, None]
    grad[rows, labels] += coef
    return float(loss.mean()), grad / labels.size


# --------------------------------------------------------------------------- base learners

@dataclass(frozen=True, eq=False)
class BaseModel:
    """Softmax regression restricted to a subset of input features."""

    name: str
    feature_index: np.ndarray
    weights: np.ndarray
    bias: np.ndarray
    best_epoch: int
    epochs_run: int
    val_history: tuple

    def logits(self, features) -> np.ndarray:
        return np.asarray(features, dtype=float)[:, self.feature_index] @ self.weights + self.bias

    def predict_proba(self, features) -> np.ndarray:
        return softmax(self.logits(features), axis=1)

    @property
    def best_val_loss(self) -> float:
        return self.val_history[self.best_epoch - 1]


def _feature_subset(n_features, fraction, rng):
    size = min(n_features, max(1, int(round(fraction * n_features))))
    if size == n_features:
        return np.arange(n_features)
    return np.sort(rng.choice(n_features, size=size, replace=False))


def train_base_learner(features, labels: LabelVector, split: SplitAssignment, spec: BaseLearnerSpec,
                       gamma: float = 2.0, class_weights: ClassWeights = None) -> BaseModel:
    """Full-batch gradient descent on the focal loss with early stopping.

    Validation focal loss is evaluated after every epoch; the parameters of
    the best epoch are kept, and training stops after ``patience`` epochs
    without improvement or at ``max_epochs``. Class weights default to the
    balanced weights of the training partition.
    """
    index = {s: i for i, s in enumerate(labels.sample_ids)}
    train_rows = np.array([index[s] for s in split.training_ids()], dtype=np.int64)
    val_rows = np.array([index[s] for s in split.validation_ids()], dtype=np.int64)
    if train_rows.size == 0 or val_rows.size == 0:
        raise DegenerateSplitError("split needs non-empty training and validation partitions")
    if class_weights is None:
        class_weights = compute_class_weights(labels, split)
    alpha = class_weights.weights

    rng = np.random.default_rng(spec.init_seed)
    x = np.asarray(features, dtype=float)
    cols = _feature_subset(x.shape[1], spec.feature_subset_fraction, rng)
    x_train, y_train = x[np.ix_(train_rows, cols)], labels.labels[train_rows]
    x_val, y_val = x[np.ix_(val_rows, cols)], labels.labels[val_rows]
    n_classes = labels.class_count
    w = 0.01 * rng.standard_normal((cols.size, n_classes))
    b = np.zeros(n_classes)

    history = []
    best = None
    waited = 0
    epoch = 0
    with np.errstate(over="ignore", invalid="ignore"):
        for epoch in range(1, spec.max_epochs + 1):
            _, grad = batch_focal_loss(x_train @ w + b, y_train, alpha, gamma)
            w = w - spec.learning_rate * (x_train.T @ grad)
            b = b - spec.learning_rate * grad.sum(axis=0)
            val_loss, _ = batch_focal_loss(x_val @ w + b, y_val, alpha, gamma)
            history.append(val_loss)
            if best is None:
                best = (val_loss if np.isfinite(val_loss) else np.inf, w, b, epoch)
            elif np.isfinite(val_loss) and val_loss < best[0]:
                best = (val_loss, w, b, epoch)
                waited = 0
            else:
                waited += 1
                if waited >= spec.patience:
                    break
    _, w_best, b_best, best_epoch = best
    return BaseModel(spec.member_name, cols, w_best, b_best, best_epoch, epoch, tuple(history))


def predict_matrix(model: BaseModel, features, sample_ids) -> PredictionMatrix:
    return PredictionMatrix(sample_ids, model.predict_proba(features))


def predict_augmented(model: BaseModel, features, aug: AugmentSpec, sample_ids) -> EnsembleBundle:
    """Predict on ``aug.copies`` jittered copies of ``features``.

    Copy 0 is the unperturbed input; copies 1.. add independent Gaussian
    noise with standard deviation ``jitter_sigma`` drawn from ``aug.seed``.
    """
    x = np.asarray(features, dtype=float)
    rng = np.random.default_rng(aug.seed)
    members = []
    for t in range(aug.copies):
        noisy = x if t == 0 else x + aug.jitter_sigma * rng.standard_normal(x.shape)
        members.append(Member(f"{model.name}@aug{t}", SourceKind.AUGMENTED_COPY,
                              predict_matrix(model, noisy, sample_ids)))
    return EnsembleBundle(tuple(members))


# --------------------------------------------------------------------------- experiments

@dataclass(frozen=True)
class EnsembleConfig:
    learners: tuple
    poolers: tuple = (PoolerKind.MEAN_UNWEIGHTED,)
    ratios: SplitRatios = SplitRatios()
    split_seed: int = 0
    stratified: bool = True
    kfold: KFoldSpec = KFoldSpec()
    augment: AugmentSpec = AugmentSpec()
    gamma: float = 2.0
    bagging_learners: tuple = None

    def __post_init__(self):
        learners = tuple(self.learners)
        if not learners:
            raise ConfigError("learners: at least one base learner is required")
        names = [spec.member_name for spec in learners]
        if len(set(names)) != len(names):
            raise ConfigError("learners: member names must be unique")
        object.__setattr__(self, "learners", learners)
        object.__setattr__(self, "poolers", tuple(PoolerKind(p) for p in self.poolers))
        if self.bagging_learners is not None:
            unknown = set(self.bagging_learners) - set(names)
            if unknown:
                raise ConfigError(f"bagging_learners: unknown learners {sorted(unknown)}")
            object.__setattr__(self, "bagging_learners", tuple(self.bagging_learners))


def thread_count() -> int:
    env = os.environ.get("ENSEMBLEPOOL_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ConfigError(f"ENSEMBLEPOOL_THREADS must be an integer, got {env!r}") from None
    return min(4, os.cpu_count() or 1)


def _parallel_map(fn, items):
    items = list(items)
    workers = min(thread_count(), len(items))
    if workers <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool_:
        return list(pool_.map(fn, items))


def _summary(report: MetricReport) -> dict:
    return {"f1": report.macro["f1"], "accuracy": report.macro["accuracy"]}


def _best(summaries: dict) -> dict:
    # first maximum in insertion order wins ties
    name = max(summaries, key=lambda k: summaries[k]["f1"])
    return {"method": name, **summaries[name]}


def _gain_pct(new, old):
    return None if old == 0 else 100.0 * (new - old) / old


@dataclass
class EvaluationReport:
    scenario: Scenario
    methods: dict
    baseline: dict
    baseline_best: dict
    best: dict
    deltas: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "scenario": self.scenario.value,
            "methods": {name: rep.to_dict() for name, rep in self.methods.items()},
            "summary": {name: _summary(rep) for name, rep in self.methods.items()},
            "baseline": self.baseline,
            "baseline_best": self.baseline_best,
            "best": self.best,
            "deltas": self.deltas,
        }


class _Experiment:
    """Shared state for one dataset: data, split, and lazily trained baseline models."""

    def __init__(self, dataset: SyntheticSpec, config: EnsembleConfig):
        self.config = config
        self.features, self.labels = generate_dataset(dataset)
        self.split = percentage_split(self.labels, config.ratios, config.split_seed, config.stratified)
        self.test_ids = self.split.ids_where(Partition.TESTING)
        self.ens_ids = self.split.ids_where(Partition.ENSEMBLE_TRAIN)
        index = {s: i for i, s in enumerate(self.labels.sample_ids)}
        self.test_rows = np.array([index[s] for s in self.test_ids])
        self.ens_rows = np.array([index[s] for s in self.ens_ids])
        self.test_labels = self.labels.take(self.test_ids)
        self.ens_labels = self.labels.take(self.ens_ids)
        self._baseline = None

    def train(self, spec, split):
        return train_base_learner(self.features, self.labels, split, spec, gamma=self.config.gamma)

    @property
    def baseline_models(self):
        if self._baseline is None:
            self._baseline = _parallel_map(lambda spec: self.train(spec, self.split), self.config.learners)
        return self._baseline

    def predictions(self, model, rows, ids):
        return predict_matrix(model, self.features[rows], ids)

    def baseline_reports(self) -> dict:
        return {m.name: evaluate(self.predictions(m, self.test_rows, self.test_ids), self.test_labels)
                for m in self.baseline_models}

    def pooled_reports(self, ens_bundle, test_bundle, prefix=""):
        out = {}
        for kind in self.config.poolers:
            fitted = fit_pooler(kind, ens_bundle, self.ens_labels)
            out[prefix + kind.value] = evaluate(pool(fitted, test_bundle), self.test_labels)
        return out

    def run(self, scenario: Scenario) -> EvaluationReport:
        scenario = Scenario(scenario)
        base = self.baseline_reports()
        if scenario is Scenario.BASELINE:
            methods = base
        elif scenario is Scenario.AUGMENTING:
            methods = {}
            for model in self.baseline_models:
                bundle = predict_augmented(model, self.features[self.test_rows], self.config.augment, self.test_ids)
                methods[f"{model.name}/augmented"] = evaluate(pool_mean_unweighted(bundle), self.test_labels)
        elif scenario is Scenario.STACKING:
            if len(self.baseline_models) < 2:
                raise ConfigError("learners: stacking needs at least 2 base learners")
            methods = self.pooled_reports(self._bundle(self.baseline_models, self.ens_rows, self.ens_ids),
                                          self._bundle(self.baseline_models, self.test_rows, self.test_ids))
        else:
            methods = self._bagging()

        summaries = {name: _summary(rep) for name, rep in base.items()}
        baseline_best = _best(summaries)
        best = _best({name: _summary(rep) for name, rep in methods.items()})
        deltas = {}
        if scenario is not Scenario.BASELINE:
            deltas = {
                "f1_gain_pct": _gain_pct(best["f1"], baseline_best["f1"]),
                "accuracy_gain_pct": _gain_pct(best["accuracy"], baseline_best["accuracy"]),
            }
        return EvaluationReport(scenario, methods, summaries, baseline_best, best, deltas)

    def _bundle(self, models, rows, ids, source_kind=SourceKind.ARCHITECTURE):
        return EnsembleBundle(tuple(Member(m.name, source_kind, self.predictions(m, rows, ids)) for m in models))

    def fold_models(self, spec):
        folds = kfold_split(self.labels, self.split, self.config.kfold)
        models = _parallel_map(lambda fs: self.train(spec, fs), folds)
        return [BaseModel(f"{spec.member_name}#fold{i}", m.feature_index, m.weights, m.bias, m.best_epoch,
                          m.epochs_run, m.val_history) for i, m in enumerate(models)]

    def _bagging(self):
        wanted = self.config.bagging_learners
        specs = [s for s in self.config.learners if wanted is None or s.member_name in wanted]
        methods = {}
        for spec in specs:
            models = self.fold_models(spec)
            ens = self._bundle(models, self.ens_rows, self.ens_ids, SourceKind.FOLD)
            test = self._bundle(models, self.test_rows, self.test_ids, SourceKind.FOLD)
            methods.update(self.pooled_reports(ens, test, prefix=f"{spec.member_name}/"))
        return methods


def run_experiments(scenarios, dataset: SyntheticSpec, config: EnsembleConfig) -> list:
    """Run several scenarios on one dataset, sharing the trained baseline models."""
    experiment = _Experiment(dataset, config)
    return [experiment.run(s) for s in scenarios]


def run_experiment(scenario, dataset: SyntheticSpec, config: EnsembleConfig) -> EvaluationReport:
    return run_experiments([scenario], dataset, config)[0]


# --------------------------------------------------------------------------- configuration documents

def _build(cls, data, path):
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected an object")
    known = {f.name for f in fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"{path}: unknown fields {sorted(unknown)}")
    try:
        return cls(**data)
    except ConfigError as exc:
        raise ConfigError(f"{path}.{exc}") from None
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path}: {exc}") from None


def default_learners(n: int = 9, fraction: float = 0.35, seed: int = 0, learning_rate: float = 0.5) -> tuple:
    return tuple(BaseLearnerSpec(f"learner_{i}", fraction, seed * 1000 + i, learning_rate) for i in range(n))


def config_from_dict(doc: dict):
    """Parse a scenario document into ``(scenarios, SyntheticSpec, EnsembleConfig)``.

    Errors are raised as ConfigError naming the offending field path.
    """
    if not isinstance(doc, dict):
        raise ConfigError("config: expected an object")
    unknown = set(doc) - {"scenarios", "scenario", "dataset", "learners", "poolers", "ratios", "split_seed",
                          "stratified", "kfold", "augment", "gamma", "bagging_learners", "seed"}
    if unknown:
        raise ConfigError(f"config: unknown fields {sorted(unknown)}")
    seed = doc.get("seed")
    raw_scen = doc.get("scenarios", doc.get("scenario", ["baseline"]))
    if isinstance(raw_scen, str):
        raw_scen = [raw_scen]
    try:
        scenarios = [Scenario(s) for s in raw_scen]
    except ValueError as exc:
        raise ConfigError(f"scenarios: {exc}") from None

    dataset_doc = dict(doc.get("dataset", {}))
    if seed is not None:
        dataset_doc.setdefault("seed", seed)
    if "imbalance" in dataset_doc and dataset_doc["imbalance"] is not None:
        dataset_doc["imbalance"] = tuple(dataset_doc["imbalance"])
    dataset = _build(SyntheticSpec, dataset_doc, "dataset")

    raw_learners = doc.get("learners")
    if raw_learners is None:
        learners = default_learners(seed=seed or 0)
    elif isinstance(raw_learners, dict):
        learners = _build_learner_family(raw_learners, seed)
    else:
        learners = tuple(_build(BaseLearnerSpec, item, f"learners[{i}]") for i, item in enumerate(raw_learners))

    kwargs = {"learners": learners}
    if "poolers" in doc:
        raw = doc["poolers"]
        if raw == "all":
            raw = [k.value for k in PoolerKind]
        try:
            kwargs["poolers"] = tuple(PoolerKind(p) for p in raw)
        except ValueError as exc:
            raise ConfigError(f"poolers: {exc}") from None
    if "ratios" in doc:
        kwargs["ratios"] = _build(SplitRatios, doc["ratios"], "ratios")
    if "kfold" in doc:
        kwargs["kfold"] = _build(KFoldSpec, doc["kfold"], "kfold")
    elif seed is not None:
        kwargs["kfold"] = KFoldSpec(5, seed)
    if "augment" in doc:
        kwargs["augment"] = _build(AugmentSpec, doc["augment"], "augment")
    elif seed is not None:
        kwargs["augment"] = AugmentSpec(seed=seed)
    for key in ("split_seed", "stratified", "gamma", "bagging_learners"):
        if key in doc:
            kwargs[key] = doc[key]
    if "split_seed" not in doc and seed is not None:
        kwargs["split_seed"] = seed
    config = _build(EnsembleConfig, kwargs, "config")
    return scenarios, dataset, config


def _build_learner_family(doc, seed):
    allowed = {"count", "feature_subset_fraction", "learning_rate", "max_epochs", "patience"}
    unknown = set(doc) - allowed
    if unknown:
        raise ConfigError(f"learners: unknown fields {sorted(unknown)}")
    count = doc.get("count", 9)
    if not isinstance(count, int) or count < 1:
        raise ConfigError("learners.count: must be a positive integer")
    return tuple(
        _build(BaseLearnerSpec, {
            "member_name": f"learner_{i}",
            "init_seed": (seed or 0) * 1000 + i,
            **{k: v for k, v in doc.items() if k != "count"},
        }, f"learners[{i}]")
        for i in range(count)
    )


def config_to_dict(scenarios, dataset: SyntheticSpec, config: EnsembleConfig) -> dict:
    return {
        "scenarios": [Scenario(s).value for s in scenarios],
        "dataset": asdict(dataset),
        "learners": [asdict(s) for s in config.learners],
        "poolers": [p.value for p in config.poolers],
        "ratios": asdict(config.ratios),
        "split_seed": config.split_seed,
        "stratified": config.stratified,
        "kfold": asdict(config.kfold),
        "augment": asdict(config.augment),
        "gamma": config.gamma,
        "bagging_learners": None if config.bagging_learners is None else list(config.bagging_learners),
    }
