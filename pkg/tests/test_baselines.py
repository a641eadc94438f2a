from __future__ import annotations

import math
import warnings

import numpy as np
import pytest

from drowsyrank.baselines import (
    LogisticConfig, LogisticModel, anomaly_baseline_score, broadcast_labels, logistic_loss, logistic_score,
    logistic_train, select_l1,
)
from drowsyrank.data import TripLabel
from drowsyrank.errors import DimensionMismatch, ModelFormatError, SingleClassData
from drowsyrank.features import AnomalyModel
from conftest import random_features


def blobs(seed=0, n=200, gap=3.0):
    rng = np.random.default_rng(seed)
    y = (rng.random(n) < 0.3).astype(float)
    X = rng.normal(0, 1, (n, 2)) + np.outer(2 * y - 1, [gap, gap])
    return X, y


def test_sigmoid_values():
    m = LogisticModel(np.zeros(2), 0.0)
    assert logistic_score(m, [1.0, -4.0]) == 0.5
    assert logistic_score(LogisticModel(np.zeros(1), math.log(3)), [0.0]) == pytest.approx(0.75)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        big = logistic_score(LogisticModel(np.array([1.0]), 0.0), [1e4])
        small = logistic_score(LogisticModel(np.array([1.0]), 0.0), [-1e4])
    assert big == 1.0 and small >= 0.0
    with pytest.raises(DimensionMismatch):
        logistic_score(m, [1.0, 2.0, 3.0])


def test_separable_training_accuracy():
    X, y = blobs()
    m = logistic_train(X, y, 0.0)
    assert np.mean((logistic_score(m, X) > 0.5) == y) == 1.0


def test_heavy_l1_gives_intercept_only_model():
    X, y = blobs(1)
    m = logistic_train(X, y, 100.0, LogisticConfig(epochs=20, learning_rate=0.1))
    assert np.all(m.weights == 0.0)
    assert m.bias == pytest.approx(math.log(y.mean() / (1 - y.mean())), abs=0.05)


def test_logistic_deterministic():
    X, y = blobs(2, gap=0.5)
    a = logistic_train(X, y, 1e-3, LogisticConfig(seed=3))
    b = logistic_train(X, y, 1e-3, LogisticConfig(seed=3))
    assert np.array_equal(a.weights, b.weights) and a.bias == b.bias


def test_training_loss_decreases_by_epoch():
    X, y = blobs(3, n=2000, gap=0.4)
    history: list[float] = []
    logistic_train(X, y, 1e-3, LogisticConfig(epochs=8, learning_rate=0.2), history=history)
    assert len(history) == 8
    assert np.all(np.diff(history) <= 1e-3)
    assert history[-1] < history[0]


def test_single_class_and_shape_errors():
    with pytest.raises(SingleClassData):
        logistic_train(np.ones((4, 2)), np.ones(4))
    with pytest.raises(DimensionMismatch):
        logistic_train(np.ones((4, 2)), np.array([0, 1, 0]))


def test_logistic_round_trip(tmp_path):
    m = LogisticModel(np.array([0.25, -1 / 7]), -0.3, 1e-3, ("a", "b"))
    m.save(tmp_path / "l.txt")
    assert (tmp_path / "l.txt").read_text().splitlines()[0] == "drowsyrank-logistic v1"
    back = LogisticModel.load(tmp_path / "l.txt")
    assert np.array_equal(back.weights, m.weights) and back.bias == m.bias and back.l1_strength == 1e-3
    (tmp_path / "x.txt").write_text("drowsyrank-model v1\n")
    with pytest.raises(ModelFormatError):
        LogisticModel.load(tmp_path / "x.txt")


def test_broadcast_labels():
    rng = np.random.default_rng(4)
    trips = [random_features(rng, 3, 2, "d", TripLabel.DROWSY), random_features(rng, 2, 2, "n", TripLabel.NORMAL)]
    X, y = broadcast_labels(trips)
    assert X.shape == (5, 2) and y.tolist() == [1, 1, 1, 0, 0]


def test_select_l1_picks_grid_value():
    rng = np.random.default_rng(5)
    trips = []
    for k in range(4):
        d = random_features(rng, 40, 3, f"d{k}", TripLabel.DROWSY)
        d.X[:, 0] += 1.0
        trips.append(d)
        trips.append(random_features(rng, 40, 3, f"n{k}", TripLabel.NORMAL))
    grid = (1e-4, 1e-2, 10.0)
    best, errors = select_l1(trips, grid, k=2)
    assert set(errors) == set(grid)
    assert best == min(grid, key=lambda s: (errors[s], -s))
    assert errors[10.0] > errors[best]
    assert select_l1(trips, (0.5,)) == (0.5, {})


def test_anomaly_baseline_values():
    model = AnomalyModel(np.zeros(6), np.eye(6))
    assert anomaly_baseline_score(np.zeros(6), model) == pytest.approx(6 * 0.5 * math.log(2 * math.pi))
    assert anomaly_baseline_score(np.zeros(6), model) == pytest.approx(5.5136, abs=1e-4)
    scores = [anomaly_baseline_score(np.full(6, d), model) for d in (0.0, 0.5, 1.0, 2.0)]
    assert np.all(np.diff(scores) > 0)


def test_anomaly_baseline_correlated():
    model = AnomalyModel(np.zeros(2), np.array([[2.0, -1.0], [-1.0, 2.0]]), ("a", "b"))
    assert anomaly_baseline_score(np.array([1.0, -1.0]), model) > anomaly_baseline_score(np.array([1.0, 1.0]), model)
    rows = anomaly_baseline_score(np.array([[1.0, 1.0], [1.0, -1.0]]), model)
    assert rows.shape == (2,)


def test_logistic_loss_at_zero():
    X, y = blobs(6)
    assert logistic_loss(LogisticModel(np.zeros(2), 0.0), X, y) == pytest.approx(math.log(2))
