"""Comparison methods.

* L1-regularised logistic regression trained on broadcast trip labels: every
  sample of a drowsy trip is a positive, every sample of a normal trip a
  negative.
* The anomaly score itself (sum over channels) used as a drowsiness score.
* :func:`lasso_fit`, re-exported from :mod:`drowsyrank.lasso`.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.special import expit, log_expit

from drowsyrank.errors import DimensionMismatch, ModelFormatError, SingleClassData
from drowsyrank.features import AnomalyModel, TripFeatures, anomaly_scores
from drowsyrank.lasso import LassoProblem, LassoResult, lasso_fit, soft_threshold

__all__ = [
    "LassoProblem", "LassoResult", "LogisticConfig", "LogisticModel", "anomaly_baseline_score",
    "broadcast_labels", "lasso_fit", "logistic_loss", "logistic_score", "logistic_train", "select_l1",
]

LOGISTIC_TAG = "drowsyrank-logistic v1"
DEFAULT_L1_GRID = (1e-4, 1e-3, 1e-2)


@dataclass(frozen=True)
class LogisticConfig:
    epochs: int = 5
    batch_size: int = 256
    learning_rate: float = 0.5
    decay: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0")


@dataclass
class LogisticModel:
    weights: np.ndarray
    bias: float
    l1_strength: float = 0.0
    feature_names: tuple[str, ...] = ()

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float)
        if not self.feature_names:
            self.feature_names = tuple(f"x{j}" for j in range(len(self.weights)))
        self.feature_names = tuple(self.feature_names)

    def save(self, path: str | Path) -> None:
        lines = [LOGISTIC_TAG, f"D={len(self.weights)} lambda={self.l1_strength!r} bias={float(self.bias)!r}"]
        lines += [f"{name} {float(w)!r}" for name, w in zip(self.feature_names, self.weights)]
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "LogisticModel":
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        if not lines or lines[0].strip() != LOGISTIC_TAG:
            raise ModelFormatError(f"{path}: not a {LOGISTIC_TAG!r} file")
        try:
            header = dict(tok.split("=", 1) for tok in lines[1].split())
            dim = int(header["D"])
            rows = [ln.rsplit(" ", 1) for ln in lines[2:2 + dim]]
            model = cls(np.array([float(r[1]) for r in rows]), float(header["bias"]),
                        float(header["lambda"]), tuple(r[0] for r in rows))
        except (IndexError, KeyError, ValueError) as exc:
            raise ModelFormatError(f"{path}: malformed logistic model ({exc})") from None
        if len(model.weights) != dim:
            raise ModelFormatError(f"{path}: expected {dim} weights")
        return model


def logistic_loss(model: LogisticModel, X: np.ndarray, y: np.ndarray) -> float:
    """Mean negative log-likelihood (without the L1 term)."""
    z = X @ model.weights + model.bias
    return float(-np.mean(y * log_expit(z) + (1 - y) * log_expit(-z)))


def logistic_train(X: np.ndarray, y: np.ndarray, l1_strength: float = 1e-3,
                   config: LogisticConfig = LogisticConfig(), feature_names: Sequence[str] = (),
                   history: list[float] | None = None) -> LogisticModel:
    """Mini-batch proximal gradient on the logistic loss plus ``l1_strength * ||w||_1``.

    The step size for epoch ``e`` is ``learning_rate / (1 + decay * e)``.  After
    every gradient step the weights (not the bias) are soft-thresholded.  If
    ``history`` is given, the full-batch loss is appended after each epoch.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float).ravel()
    if X.shape[0] != y.shape[0]:
        raise DimensionMismatch(f"{X.shape[0]} rows but {y.shape[0]} labels")
    if len(np.unique(y)) < 2:
        raise SingleClassData("logistic regression needs both drowsy and normal samples")
    if l1_strength < 0:
        raise ValueError("l1_strength must be >= 0")
    rng = np.random.default_rng(config.seed)
    n, p = X.shape
    w = np.zeros(p)
    prior = y.mean()
    b = float(np.log(prior / (1.0 - prior)))
    model = LogisticModel(w, b, l1_strength, tuple(feature_names))
    for epoch in range(config.epochs):
        eta = config.learning_rate / (1.0 + config.decay * epoch)
        order = rng.permutation(n)
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            xb, yb = X[idx], y[idx]
            err = expit(xb @ w + b) - yb
            w = soft_threshold(w - eta * (xb.T @ err) / len(idx), eta * l1_strength)
            b -= eta * float(err.mean())
        if history is not None:
            history.append(logistic_loss(LogisticModel(w, b), X, y))
    model.weights, model.bias = w, b
    return model


def logistic_score(model: LogisticModel, x) -> float | np.ndarray:
    x = np.asarray(getattr(x, "values", x), dtype=float)
    if x.shape[-1] != len(model.weights):
        raise DimensionMismatch(f"model has {len(model.weights)} weights, input has {x.shape[-1]} features")
    return expit(x @ model.weights + model.bias)


def broadcast_labels(trips: Sequence[TripFeatures]) -> tuple[np.ndarray, np.ndarray]:
    """Stack trips into (X, y) with every sample inheriting its trip label."""
    X = np.vstack([tf.X for tf in trips])
    y = np.concatenate([np.full(len(tf), 1.0 if tf.is_drowsy else 0.0) for tf in trips])
    return X, y


def select_l1(trips: Sequence[TripFeatures], grid: Sequence[float], config: LogisticConfig = LogisticConfig(),
              k: int = 3) -> tuple[float, dict[float, float]]:
    """Pick the L1 strength by k-fold cross-validation over trips.

    Drowsy and normal trips are dealt round-robin into folds separately so
    every fold sees both classes.  The criterion is the held-out mean
    log-loss; ties go to the larger strength.
    """
    grid = list(grid)
    if len(grid) == 1:
        return grid[0], {}
    drowsy = [i for i, tf in enumerate(trips) if tf.is_drowsy]
    normal = [i for i, tf in enumerate(trips) if not tf.is_drowsy]
    k = min(k, len(drowsy), len(normal))
    if k < 2:
        return grid[0], {}
    folds = [drowsy[j::k] + normal[j::k] for j in range(k)]
    errors: dict[float, float] = {}
    for strength in grid:
        losses = []
        for held in folds:
            held_set = set(held)
            X, y = broadcast_labels([tf for i, tf in enumerate(trips) if i not in held_set])
            model = logistic_train(X, y, strength, config)
            Xh, yh = broadcast_labels([trips[i] for i in held])
            losses.append(logistic_loss(model, Xh, yh))
        errors[strength] = float(np.mean(losses))
    best = min(grid, key=lambda s: (errors[s], -s))
    return best, errors


def anomaly_baseline_score(x_raw, model: AnomalyModel) -> float | np.ndarray:
    """Sum of per-channel anomaly scores; rows of a matrix are scored separately."""
    return anomaly_scores(x_raw, model).sum(axis=-1)
