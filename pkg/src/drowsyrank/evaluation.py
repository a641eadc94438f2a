"""ROC/AUC, stratified folds and the cross-validation protocol.

Two AUCs are reported per fold:

AUC1
    trip level; each test trip is scored by the maximum of its sample scores
    and classified against its drowsy/normal label.
AUC2
    sample level; raw sample scores against per-timestamp truth.  Only
    defined for data carrying a ``truth`` column.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from drowsyrank.baselines import (
    DEFAULT_L1_GRID, LogisticConfig, anomaly_baseline_score, broadcast_labels, logistic_score, logistic_train,
    select_l1,
)
from drowsyrank.data import Dataset, Trip
from drowsyrank.errors import EmptyTrip, KTooLarge, MissingTimestampTruth, SingleClassLabels
from drowsyrank.features import FeatureConfig, FeaturePipeline, TripFeatures
from drowsyrank.ranker import DEFAULT_LAMBDA_GRID, TrainConfig, score, select_lambda, train

METHODS = ("proposed", "logistic", "anomaly")


@dataclass
class RocCurve:
    thresholds: np.ndarray
    fpr: np.ndarray
    tpr: np.ndarray
    auc: float

    @property
    def points(self) -> list[tuple[float, float, float]]:
        return list(zip(self.thresholds.tolist(), self.fpr.tolist(), self.tpr.tolist()))

    def trapezoid(self) -> float:
        return float(np.sum(np.diff(self.fpr) * (self.tpr[1:] + self.tpr[:-1]) / 2.0))


def roc_auc(scores, labels, drop_intermediate: bool = True) -> tuple[RocCurve, float]:
    """ROC curve over the distinct score thresholds, highest first.

    Tied scores share one threshold, so the trapezoid across a tie gives half
    credit and the area equals the Mann-Whitney statistic.  Collinear interior
    points are dropped unless ``drop_intermediate`` is false.
    """
    scores = np.asarray(scores, dtype=float).ravel()
    labels = np.asarray(labels).ravel().astype(bool)
    if scores.shape != labels.shape:
        raise ValueError("scores and labels differ in length")
    if not np.isfinite(scores).all():
        raise ValueError("scores must be finite")
    n_pos = int(labels.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise SingleClassLabels("ROC needs both positive and negative labels")
    order = np.argsort(-scores, kind="mergesort")
    s, lab = scores[order], labels[order]
    last = np.r_[np.flatnonzero(np.diff(s)), len(s) - 1]  # last index of each tie group
    tps = np.r_[0, np.cumsum(lab)[last]]
    fps = np.r_[0, np.cumsum(~lab)[last]]
    thresholds = np.r_[np.inf, s[last]]
    if drop_intermediate and len(tps) > 2:
        keep = np.r_[True, np.logical_or(np.diff(fps, 2), np.diff(tps, 2)), True]
        tps, fps, thresholds = tps[keep], fps[keep], thresholds[keep]
    # integer trapezoid, one division at the end
    area = int(np.sum(np.diff(fps) * (tps[1:] + tps[:-1])))
    auc = area / (2.0 * n_pos * n_neg)
    curve = RocCurve(thresholds, fps / n_neg, tps / n_pos, auc)
    return curve, auc


def pairwise_auc(scores, labels) -> float:
    """Brute-force AUC: wins plus half ties over all positive/negative pairs."""
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels).astype(bool)
    pos, neg = scores[labels], scores[~labels]
    if len(pos) == 0 or len(neg) == 0:
        raise SingleClassLabels("need both classes")
    wins = ties = 0
    for p in pos:
        for q in neg:
            if p > q:
                wins += 1
            elif p == q:
                ties += 1
    return (wins + 0.5 * ties) / (len(pos) * len(neg))


def trip_max_scores(per_trip_scores: Sequence[np.ndarray]) -> np.ndarray:
    out = []
    for k, s in enumerate(per_trip_scores):
        s = np.asarray(s, dtype=float)
        if s.size == 0:
            raise EmptyTrip(f"trip #{k} has no scored samples")
        out.append(s.max())
    return np.array(out)


def auc1(per_trip_scores: Sequence[np.ndarray], trip_labels: Sequence[bool]) -> float:
    return roc_auc(trip_max_scores(per_trip_scores), np.asarray(trip_labels, dtype=bool))[1]


def auc2(per_trip_scores: Sequence[np.ndarray], per_trip_truth: Sequence[np.ndarray | None]) -> float:
    if any(t is None for t in per_trip_truth):
        raise MissingTimestampTruth("AUC2 needs per-timestamp truth; the data has no truth column")
    return roc_auc(np.concatenate(per_trip_scores), np.concatenate(per_trip_truth))[1]


@dataclass
class FoldSpec:
    k: int
    folds: list[list[str]]
    seed: int

    def train_ids(self, fold: int, all_ids: Sequence[str]) -> list[str]:
        test = set(self.folds[fold])
        return [i for i in all_ids if i not in test]


def stratified_kfold(dataset: Dataset, k: int, seed: int = 0) -> FoldSpec:
    """Deal shuffled drowsy trips, then shuffled normal trips, round-robin into k folds."""
    if k < 2:
        raise ValueError("k must be >= 2")
    if k > dataset.n_drowsy or k > dataset.n_normal:
        raise KTooLarge(f"k={k} exceeds the number of drowsy ({dataset.n_drowsy}) "
                        f"or normal ({dataset.n_normal}) trips")
    rng = np.random.default_rng(seed)
    folds: list[list[str]] = [[] for _ in range(k)]
    for group in (dataset.drowsy, dataset.normal):
        ids = [trip.id for trip in group]
        for j, idx in enumerate(rng.permutation(len(ids))):
            folds[j % k].append(ids[idx])
    return FoldSpec(k, folds, seed)


@dataclass(frozen=True)
class CVConfig:
    train: TrainConfig = field(default_factory=TrainConfig)
    lambda_grid: tuple[float, ...] = DEFAULT_LAMBDA_GRID
    features: FeatureConfig = field(default_factory=FeatureConfig)
    anomaly_alpha: float = 0.1
    logistic: LogisticConfig = field(default_factory=LogisticConfig)
    l1_grid: tuple[float, ...] = DEFAULT_L1_GRID
    inner_k: int = 3


@dataclass
class FoldLog:
    fold: int
    test_ids: list[str]
    anomaly_fit_ids: list[str]
    standardizer_fit_ids: list[str]
    model_fit_ids: list[str]
    lam: float | None = None  # selected lambda (proposed) or L1 strength (logistic)


@dataclass
class FoldResult:
    fold: int
    auc1: float
    auc2: float
    log: FoldLog
    trip_ids: list[str]
    trip_labels: list[bool]
    scores: list[np.ndarray]
    truth: list[np.ndarray | None]


@dataclass
class EvalReport:
    method: str
    auc1: list[float]
    auc2: list[float]
    folds: FoldSpec
    config: dict
    logs: list[FoldLog] = field(default_factory=list)
    results: list[FoldResult] = field(default_factory=list, repr=False)

    @property
    def mean_auc1(self) -> float:
        return float(np.mean(self.auc1))

    @property
    def mean_auc2(self) -> float:
        return float(np.mean(self.auc2))

    def pooled(self, level: str = "sample") -> tuple[np.ndarray, np.ndarray]:
        """Test scores and labels of all folds concatenated (for a ROC plot)."""
        if level == "trip":
            s = np.concatenate([trip_max_scores(r.scores) for r in self.results])
            y = np.concatenate([np.asarray(r.trip_labels, bool) for r in self.results])
            return s, y
        if any(t is None for r in self.results for t in r.truth):
            raise MissingTimestampTruth("sample-level ROC needs per-timestamp truth")
        s = np.concatenate([np.concatenate(r.scores) for r in self.results])
        y = np.concatenate([np.concatenate(r.truth) for r in self.results])
        return s, y


def _score_method(method: str, pipeline: FeaturePipeline, train_feats: list[TripFeatures],
                  test_feats: list[TripFeatures], config: CVConfig, seed: int):
    """Fit ``method`` on the training features; returns (per-test-trip scores, fitted ids, lambda)."""
    if method == "proposed":
        drowsy = [tf for tf in train_feats if tf.is_drowsy]
        tcfg = TrainConfig(config.train.iterations, seed, config.train.optimizer, config.train.min_time_gap,
                           config.train.loss_report_every, config.train.loss_subsample)
        lam, _ = select_lambda(drowsy, config.lambda_grid, tcfg, config.inner_k)
        model = train(drowsy, tcfg, lam)
        return [score(model, tf.X) for tf in test_feats], [tf.trip_id for tf in drowsy], lam
    if method == "logistic":
        X, y = broadcast_labels(train_feats)
        lcfg = LogisticConfig(config.logistic.epochs, config.logistic.batch_size, config.logistic.learning_rate,
                              config.logistic.decay, seed)
        strength, _ = select_l1(train_feats, config.l1_grid, lcfg, config.inner_k)
        model = logistic_train(X, y, strength, lcfg)
        return [logistic_score(model, tf.X) for tf in test_feats], [tf.trip_id for tf in train_feats], strength
    if method == "anomaly":
        return ([anomaly_baseline_score(tf.raw, pipeline.anomaly) for tf in test_feats],
                anomaly_fit_ids(train_feats), None)
    raise ValueError(f"unknown method {method!r}; expected one of {METHODS}")


def anomaly_fit_ids(train_feats: list[TripFeatures]) -> list[str]:
    return [tf.trip_id for tf in train_feats if not tf.is_drowsy]


def run_fold(dataset: Dataset, folds: FoldSpec, fold: int, method: str, config: CVConfig, seed: int) -> FoldResult:
    """One fold: fit preprocessing and the method on the training split, score the test split."""
    all_ids = [trip.id for trip in dataset]
    train_ids = folds.train_ids(fold, all_ids)
    test_ids = [i for i in all_ids if i in set(folds.folds[fold])]
    train_trips = [dataset.by_id(i) for i in train_ids]
    test_trips = [dataset.by_id(i) for i in test_ids]
    normal_train = [t for t in train_trips if not t.is_drowsy]

    pipeline = FeaturePipeline(config.features, anomaly_alpha=config.anomaly_alpha)
    pipeline.fit(normal_train, train_trips)
    train_feats = [pipeline.transform(t) for t in train_trips]
    test_feats = [pipeline.transform(t) for t in test_trips]

    scores, fit_ids, lam = _score_method(method, pipeline, train_feats, test_feats, config, seed)
    labels = [tf.is_drowsy for tf in test_feats]
    truth = [tf.truth for tf in test_feats]
    a1 = auc1(scores, labels)
    a2 = auc2(scores, truth) if all(t is not None for t in truth) else math.nan
    log = FoldLog(fold, test_ids, [t.id for t in normal_train],
                  train_ids if config.features.standardize else [], fit_ids, lam)
    return FoldResult(fold, a1, a2, log, test_ids, labels, scores, truth)


def _run_fold_job(args):
    return run_fold(*args)


def cross_validate(dataset: Dataset, method: str = "proposed", k: int = 11, seed: int = 0,
                   config: CVConfig = CVConfig(), jobs: int = 1) -> EvalReport:
    """Stratified k-fold evaluation of one method.

    Fold ``j`` is seeded with ``seed + j``.  With ``jobs > 1`` folds run in
    worker processes; results are merged by fold index either way.
    """
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}; expected one of {METHODS}")
    folds = stratified_kfold(dataset, k, seed)
    args = [(dataset, folds, j, method, config, seed + j) for j in range(k)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_fold_job, args))
    else:
        results = [run_fold(*a) for a in args]
    results.sort(key=lambda r: r.fold)
    echo = {"method": method, "k": k, "seed": seed, "iterations": config.train.iterations,
            "optimizer": repr(config.train.optimizer), "lambda_grid": list(config.lambda_grid),
            "min_time_gap": config.train.min_time_gap, "l1_grid": list(config.l1_grid),
            "anomaly_alpha": config.anomaly_alpha}
    return EvalReport(method, [r.auc1 for r in results], [r.auc2 for r in results], folds, echo,
                      [r.log for r in results], results)


def _fmt(x: float) -> str:
    return "nan" if math.isnan(x) else repr(float(x))


def export_roc_csv(curve: RocCurve, path: str | Path) -> None:
    lines = ["threshold,fpr,tpr"] + [f"{_fmt(th)},{_fmt(f)},{_fmt(t)}" for th, f, t in curve.points]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_roc_csv(path: str | Path) -> RocCurve:
    with Path(path).open(newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    th = np.array([float(r["threshold"]) for r in rows])
    fpr = np.array([float(r["fpr"]) for r in rows])
    tpr = np.array([float(r["tpr"]) for r in rows])
    curve = RocCurve(th, fpr, tpr, 0.0)
    curve.auc = curve.trapezoid()
    return curve


def report_lines(report: EvalReport) -> list[str]:
    lines = ["fold,auc1,auc2"]
    lines += [f"{j},{_fmt(a)},{_fmt(b)}" for j, (a, b) in enumerate(zip(report.auc1, report.auc2))]
    lines.append(f"mean,{_fmt(report.mean_auc1)},{_fmt(report.mean_auc2)}")
    return lines


def export_report(report: EvalReport | Sequence[EvalReport], path: str | Path) -> None:
    """Write ``fold,auc1,auc2`` rows plus a ``mean`` row.

    Several reports are written as consecutive sections, each introduced by
    a ``# method=<name>`` line.
    """
    reports = [report] if isinstance(report, EvalReport) else list(report)
    lines: list[str] = []
    for r in reports:
        if len(reports) > 1:
            lines.append(f"# method={r.method}")
        lines += report_lines(r)
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_report(path: str | Path) -> dict[str, list[tuple[str, float, float]]]:
    """Parse a report CSV into ``{method: [(fold, auc1, auc2), ...]}``.

    A single-section file is returned under the key ``""``.
    """
    out: dict[str, list[tuple[str, float, float]]] = {}
    method = ""
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if not line:
            continue
        if line.startswith("# method="):
            method = line.split("=", 1)[1]
            continue
        if line.startswith("fold,"):
            out.setdefault(method, [])
            continue
        fold, a, b = line.split(",")
        out.setdefault(method, []).append((fold, float(a), float(b)))
    return out


def score_trip(trip: Trip, pipeline: FeaturePipeline, model) -> tuple[TripFeatures, np.ndarray]:
    """Featurise ``trip`` and score it with a ranker, logistic or (``None``) anomaly model."""
    feats = pipeline.transform(trip)
    if model is None:
        return feats, anomaly_baseline_score(feats.raw, pipeline.anomaly)
    if hasattr(model, "bias"):
        return feats, logistic_score(model, feats.X)
    return feats, score(model, feats.X)
