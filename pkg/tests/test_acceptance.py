"""Acceptance suite: one test per headline criterion.

Each test prints a PASS/FAIL line (also collected in the terminal summary)
and then asserts, so a failing criterion fails the run.
"""
import json
import math
import time
import warnings

import numpy as np
import pytest
from scipy.special import softmax

from ensemblepool.cli import main
from ensemblepool.core import ClassWeights, EnsembleBundle, FoldRole, LabelVector, Partition, PredictionMatrix
from ensemblepool.learners import (
    TrainSet,
    fit_complement_nb,
    fit_decision_tree,
    fit_gp_classifier,
    fit_logistic_regression,
    fit_svm,
)
from ensemblepool.learners import gp as gp_module
from ensemblepool.learners.svm import dual_objective, rbf_kernel
from ensemblepool.metrics import accuracy, confusion, f1_with_flag, fpr, roc_auc, sensitivity_with_flag
from ensemblepool.poolers import (
    pool_global_argmax,
    pool_majority_vote_hard,
    pool_mean_unweighted,
    pool_mean_weighted,
)
from ensemblepool.sampling import KFoldSpec, kfold_split, percentage_split
from ensemblepool.simulate import (
    BaseLearnerSpec,
    EnsembleConfig,
    FocalLossParams,
    SyntheticSpec,
    focal_loss,
    focal_loss_gradient,
    default_learners,
    run_experiments,
)
from oracles import (
    central_difference,
    cnb_formula,
    gp_fixed_point_mode,
    logreg_gd_oracle,
    mann_whitney_auc,
    softmax_rows,
    svm_dual_projected_gradient,
    vote_count_oracle,
)


# ---------------------------------------------------------------- pooling oracle suite

def test_pooling_oracle_suite(criterion):
    rng = np.random.default_rng(12345)
    bundles = []
    for _ in range(1000):
        m, c, n = int(rng.integers(1, 8)), int(rng.integers(2, 7)), int(rng.integers(1, 21))
        raw = np.round(rng.dirichlet(np.ones(c) * 0.7, size=(m, n)) * 6) + 1e-3
        raw /= raw.sum(axis=2, keepdims=True)
        ids = [f"s{i}" for i in range(n)]
        bundle = EnsembleBundle.from_matrices([PredictionMatrix(ids, r) for r in raw])
        bundles.append((bundle, rng.dirichlet(np.ones(m))))

    vote_ok = convex_ok = argmax_ok = True
    elapsed = 0.0
    for bundle, w in bundles:
        t0 = time.perf_counter()
        hard = pool_majority_vote_hard(bundle).values
        mean = pool_mean_unweighted(bundle).values
        weighted = pool_mean_weighted(bundle, w).values
        ga = pool_global_argmax(bundle).values
        elapsed += time.perf_counter() - t0
        stacked = bundle.stack()
        lo, hi = stacked.min(axis=0), stacked.max(axis=0)
        vote_ok &= np.array_equal(hard, vote_count_oracle(stacked))
        convex_ok &= bool(np.all(mean >= lo - 1e-15) and np.all(mean <= hi + 1e-15))
        convex_ok &= bool(np.all(weighted >= lo - 1e-15) and np.all(weighted <= hi + 1e-15))
        argmax_ok &= bool(np.all((ga != 0).sum(axis=1) == 1))
        argmax_ok &= np.array_equal(ga.max(axis=1), stacked.max(axis=(0, 2)))

    ok = vote_ok and convex_ok and argmax_ok and elapsed < 10.0
    criterion("pooling oracle suite (1000 bundles)", ok,
              f"vote={vote_ok} convex={convex_ok} global-argmax={argmax_ok} runtime={elapsed:.2f}s (<10s)")
    assert ok


# ---------------------------------------------------------------- AUC vs Mann-Whitney

def test_auc_matches_mann_whitney(criterion):
    rng = np.random.default_rng(777)
    worst, elapsed = 0.0, 0.0
    done = 0
    while done < 500:
        n = int(rng.integers(2, 201))
        scores = np.round(rng.random(n), int(rng.integers(1, 4)))  # rounding creates ties
        positives = rng.random(n) < rng.uniform(0.1, 0.9)
        if positives.all() or not positives.any():
            continue
        t0 = time.perf_counter()
        _, auc = roc_auc(scores, positives)
        elapsed += time.perf_counter() - t0
        worst = max(worst, abs(auc - mann_whitney_auc(list(scores), list(positives))))
        done += 1
    ok = worst <= 1e-9 and elapsed < 5.0
    criterion("AUC equals Mann-Whitney (500 instances)", ok, f"max |diff|={worst:.2e} runtime={elapsed:.2f}s (<5s)")
    assert ok


# ---------------------------------------------------------------- metrics fixture

def test_metrics_fixture(criterion):
    truth = [0, 0, 0, 0, 1, 1, 1, 1, 1, 1]
    pred = [0, 0, 1, 1, 0, 1, 1, 1, 1, 1]
    ids = [f"s{i}" for i in range(10)]
    counts = confusion(PredictionMatrix(ids, np.eye(2)[pred]), LabelVector(ids, truth, 2))
    got = (accuracy(counts, 0), f1_with_flag(counts, 0)[0], sensitivity_with_flag(counts, 0)[0], fpr(counts, 0))
    want = (0.7, 4 / 7, 0.5, 1 / 6)
    err = max(abs(g - w) for g, w in zip(got, want))
    ok = err <= 1e-12
    criterion("metrics fixture (class 0)", ok,
              "accuracy={:.12f} f1={:.12f} sensitivity={:.12f} fpr={:.12f} max err={:.1e}".format(*got, err))
    assert ok


# ---------------------------------------------------------------- focal loss

def test_focal_loss(criterion):
    unit = FocalLossParams(ClassWeights(np.ones(2)), 2.0)
    ce = FocalLossParams(ClassWeights(np.ones(2)), 0.0)
    spot = [
        abs(focal_loss([0.0, 1.0], 1, unit) - 0.0),
        abs(focal_loss([0.35, 0.65], 1, ce) - (-math.log(0.65))),
        abs(focal_loss([0.5, 0.5], 0, unit) - 0.25 * math.log(2)),
    ]
    rng = np.random.default_rng(99)
    worst = 0.0
    for _ in range(100):
        c = int(rng.integers(2, 9))
        logits = rng.normal(scale=2.0, size=c)
        t = int(rng.integers(c))
        prm = FocalLossParams(ClassWeights(rng.uniform(0.2, 3.0, c)), float(rng.uniform(0, 4)))
        numeric = central_difference(lambda z: focal_loss(softmax(z), t, prm), logits)
        analytic = focal_loss_gradient(logits, t, prm)
        worst = max(worst, np.abs(analytic - numeric).max() / max(np.abs(numeric).max(), 1e-12))
    ok = max(spot) <= 1e-12 and worst <= 1e-4
    criterion("focal loss spot values and gradient", ok,
              f"max spot err={max(spot):.1e} (<=1e-12) max grad rel err={worst:.1e} (<=1e-4)")
    assert ok


# ---------------------------------------------------------------- learner optimality

def test_learner_optimality(criterion):
    checks = {}

    model = fit_logistic_regression(TrainSet([[-2.0], [-1.0], [1.0], [2.0]], [0, 0, 1, 1]))
    checks["logreg gradient"] = (model.grad_norm < 1e-5, f"{model.grad_norm:.1e}")
    rng = np.random.default_rng(11)
    x = rng.normal(size=(20, 2))
    y = (x[:, 0] + 0.5 * x[:, 1] + 0.3 * rng.normal(size=20) > 0).astype(int)
    theta = logreg_gd_oracle(x, y, 2)
    gap = np.abs(fit_logistic_regression(TrainSet(x, y)).predict_proba(x)
                 - softmax_rows(np.hstack([x, np.ones((20, 1))]) @ theta.T)).max()
    checks["logreg vs GD oracle"] = (gap <= 1e-3, f"{gap:.1e}")

    rng = np.random.default_rng(7)
    x = np.vstack([rng.normal([-0.5, 0.0], 0.8, size=(10, 2)), rng.normal([0.5, 0.3], 0.8, size=(10, 2))])
    y = np.repeat([0, 1], 10)
    svm = fit_svm(TrainSet(x, y))
    d = svm.diagnostics[0]
    alpha, yy = d["alpha"], d["y"]
    feas = max(abs(alpha @ yy), max(0.0, -alpha.min()), max(0.0, alpha.max() - 1.0))
    checks["svm feasibility"] = (feas <= 1e-9, f"{feas:.1e}")
    k = rbf_kernel(x[d["rows"]], x[d["rows"]], svm.gamma)
    _, ref = svm_dual_projected_gradient(k, yy, 1.0)
    obj_gap = abs(dual_objective(alpha, yy[:, None] * yy[None, :] * k) - ref)
    checks["svm dual vs oracle"] = (obj_gap <= 1e-4, f"{obj_gap:.1e}")

    gp = fit_gp_classifier(TrainSet([[-1.0], [1.0]], [0, 1]))
    mid = gp.predict_proba([[0.0]])[0]
    checks["gp symmetry"] = (abs(mid[0] - 0.5) <= 1e-6, f"{mid[0]:.9f}")
    x = np.linspace(-2, 2, 10)[:, None]
    yb = np.where(np.array([0, 0, 1, 0, 0, 1, 1, 0, 1, 1]) == 1, 1.0, -1.0)
    kk = gp_module.rbf(x, x, 1.0)
    f, _, _, grad_norm, _ = gp_module.find_mode(kk, yb)
    checks["gp mode gradient"] = (grad_norm < 1e-8, f"{grad_norm:.1e}")
    fp_gap = np.abs(f - gp_fixed_point_mode(kk, yb)).max()
    checks["gp vs fixed-point oracle"] = (fp_gap <= 1e-6, f"{fp_gap:.1e}")

    x = np.array([[1.0, 0.0, 2.0], [0.5, 1.0, 0.0], [0.0, 3.0, 1.0], [2.0, 0.5, 0.5]])
    y = np.array([0, 0, 1, 1])
    cnb = fit_complement_nb(TrainSet(x, y))
    counts, weights = cnb_formula(x, y)
    cnb_gap = max(np.abs(cnb.complement_counts - counts).max(), np.abs(cnb.log_weights - weights).max())
    checks["cnb vs formula"] = (cnb_gap <= 1e-12, f"{cnb_gap:.1e}")

    rng = np.random.default_rng(4)
    x = rng.normal(size=(60, 3))
    y = rng.integers(0, 4, 60)
    tree_acc = np.mean(fit_decision_tree(TrainSet(x, y)).predict(x) == y)
    checks["tree training accuracy"] = (tree_acc == 1.0, f"{tree_acc:.3f}")

    ok = all(v[0] for v in checks.values())
    criterion("learner optimality", ok, " ".join(f"{k}={v[1]}{'' if v[0] else '!'}" for k, v in checks.items()))
    assert ok


# ---------------------------------------------------------------- sampling

# Per-class image counts of the four public datasets (from their own documentation).
DATASET_CLASS_COUNTS = {
    "CHMNIST": ([625] * 8, (3250, 501, 500, 749)),
    "COVID": ([219, 1345, 1341], (1889, 291, 290, 435)),
    "ISIC": ([4522, 12875, 3323, 867, 2624, 239, 253, 628], (16466, 2533, 2533, 3799)),
    "DRD": ([25810, 2443, 5292, 873, 708], (22832, 3513, 3513, 5268)),
}


def test_sampling_shapes(criterion):
    details, ok = [], True
    for name, (counts, reference) in DATASET_CLASS_COUNTS.items():
        y = np.repeat(np.arange(len(counts)), counts)
        labels = LabelVector([f"i{j}" for j in range(y.size)], y, len(counts))
        got = percentage_split(labels, seed=0).counts()
        got = tuple(got.get(p, 0) for p in Partition)
        dev = max(abs(g - w) for g, w in zip(got, reference))
        ok &= dev <= len(counts)
        details.append(f"{name}={'/'.join(map(str, got))} (max dev {dev}, C={len(counts)})")

    # five classes of 20 split exactly 13/2/2/3, so the CV pool is 75 of 100
    labels = LabelVector([f"c{j}" for j in range(100)], np.repeat(np.arange(5), 20), 5)
    base = percentage_split(labels, seed=0)
    pool_size = len(base.ids_where(Partition.MODEL_TRAIN, Partition.MODEL_VAL))
    fold_fracs = set()
    for fold in kfold_split(labels, base, KFoldSpec(5, 0)):
        c = fold.counts()
        fold_fracs.add((c[FoldRole.FOLD_TRAIN] / 100, c[FoldRole.FOLD_VAL] / 100))
    fold_ok = fold_fracs == {(0.60, 0.15)} and pool_size == 75
    ok &= fold_ok
    details.append(f"5-fold train/val fractions={sorted(fold_fracs)}")
    criterion("sampling partition sizes and 5-fold shape", ok, "; ".join(details))
    assert ok


# ---------------------------------------------------------------- directional reproduction

SEEDS = range(20)


def standard_scenario(seed):
    dataset = SyntheticSpec(n_samples=5000, n_classes=8, n_features=24, class_separation=3.0,
                            label_noise=0.1, seed=seed)
    config = EnsembleConfig(default_learners(9, 0.35, seed), split_seed=seed, kfold=KFoldSpec(5, seed))
    return dataset, config


def large_n(seed):
    dataset = SyntheticSpec(n_samples=20000, n_classes=8, n_features=200, class_separation=3.0,
                            label_noise=0.1, seed=seed)
    config = EnsembleConfig((BaseLearnerSpec("single", 1.0, seed * 1000),), split_seed=seed,
                            kfold=KFoldSpec(5, seed))
    return dataset, config


@pytest.fixture(scope="module")
def directional_runs():
    t0 = time.perf_counter()
    stacking_gain, augment_change, bagging_gain = [], [], []
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        for seed in SEEDS:
            base, aug, stack = run_experiments(["baseline", "augmenting", "stacking"], *standard_scenario(seed))
            stacking_gain.append(stack.methods["mean-unweighted"].macro["f1"] - base.baseline_best["f1"])
            augment_change.extend(aug.methods[f"{name}/augmented"].macro["f1"] - summary["f1"]
                                  for name, summary in base.baseline.items())
            single, bag = run_experiments(["baseline", "bagging"], *large_n(seed))
            bagging_gain.append(bag.methods["single/mean-unweighted"].macro["f1"] - single.baseline["single"]["f1"])
    elapsed = time.perf_counter() - t0
    return np.array(stacking_gain), np.array(augment_change), np.array(bagging_gain), elapsed


def test_directional_stacking(directional_runs, criterion):
    gain, _, _, elapsed = directional_runs
    share, median = float(np.mean(gain >= 0)), float(np.median(gain))
    ok = share >= 0.8 and median > 0 and elapsed < 600
    criterion("directional (a) stacking mean >= best single", ok,
              f"share={share:.2f} (>=0.80) median gain={median:+.4f} (>0) total runtime={elapsed:.0f}s (<600s)")
    assert ok


def test_directional_bagging(directional_runs, criterion):
    _, _, gain, elapsed = directional_runs
    share = float(np.mean(gain >= 0))
    ok = share >= 0.7 and elapsed < 600
    criterion("directional (b) bagging mean >= single 65%-split model", ok,
              f"share={share:.2f} (>=0.70) median gain={np.median(gain):+.4f} total runtime={elapsed:.0f}s")
    assert ok


def test_directional_augmenting(directional_runs, criterion):
    _, change, _, elapsed = directional_runs
    median = float(np.median(change))
    ok = median >= -0.01 and elapsed < 600
    criterion("directional (c) augmenting median change >= -1 point", ok,
              f"median change={median:+.4f} (>=-0.01) total runtime={elapsed:.0f}s")
    assert ok


# ---------------------------------------------------------------- determinism

def test_experiment_determinism(tmp_path, criterion):
    config = {
        "scenarios": ["baseline", "augmenting", "stacking", "bagging"],
        "dataset": {"n_samples": 800, "n_classes": 4, "n_features": 8},
        "learners": {"count": 3, "feature_subset_fraction": 0.5},
        "poolers": "all",
        "augment": {"copies": 4, "jitter_sigma": 0.1, "seed": 1},
        "seed": 3,
    }
    (tmp_path / "config.json").write_text(json.dumps(config))
    codes = [main(["experiment", str(tmp_path / "config.json"), "--seed", "3", "--out", str(tmp_path / name)])
             for name in ("a.json", "b.json")]
    a, b = (tmp_path / "a.json").read_bytes(), (tmp_path / "b.json").read_bytes()
    ok = codes == [0, 0] and a == b
    criterion("experiment determinism (byte-identical reports)", ok, f"exit codes={codes} bytes={len(a)} identical={a == b}")
    assert ok
