"""Per-timestamp feature vectors.

For every frame after the first, the feature vector is built from four groups:

* raw channels at t and t-1: ax, ay, az, |a|, speed, direction (12 values)
* backward time derivatives of the six raw channels (6 values)
* per-channel anomaly scores under a sparse Gaussian graphical model fitted
  to normal driving (6 values)

The anomaly model's precision matrix is estimated by neighbourhood Lasso:
each channel is regressed on the others and the coefficients are folded into
a symmetrised precision matrix.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from drowsyrank.data import SensorFrame, Trip, TripLabel
from drowsyrank.errors import DegenerateData, DimensionMismatch, InsufficientData, TripTooShort
from drowsyrank.lasso import LassoProblem, lasso_fit

CHANNELS = ("X-acceleration", "Y-acceleration", "Z-acceleration",
            "acceleration-magnitude", "speed", "direction")
DERIVATIVE_NAMES = ("X-jerk", "Y-jerk", "Z-jerk",
                    "magnitude-derivative", "speed-derivative", "direction-derivative")
LAG_NAMES = tuple(f"{name}@t-1" for name in CHANNELS)
ANOMALY_NAMES = tuple(f"anomaly:{name}" for name in CHANNELS)

N_CHANNELS = len(CHANNELS)
DIRECTION = CHANNELS.index("direction")
VARIANCE_FLOOR = 1e-8
STD_FLOOR = 1e-8
HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)


def wrap_degrees(delta):
    """Map angle differences into (-180, 180]."""
    return -(np.mod(180.0 - np.asarray(delta, dtype=float), 360.0) - 180.0)


def raw_matrix(values: np.ndarray) -> np.ndarray:
    """Raw channel matrix ``(T, 6)`` from a trip's ``(T, 6)`` value array."""
    ax, ay, az = values[:, 1], values[:, 2], values[:, 3]
    mag = np.sqrt(ax * ax + ay * ay + az * az)
    return np.column_stack([ax, ay, az, mag, values[:, 4], values[:, 5]])


def raw_channels(frame: SensorFrame, prev: SensorFrame) -> np.ndarray:
    """The six raw channels at ``frame`` followed by the same six at ``prev``."""
    if not prev.t < frame.t:
        raise ValueError(f"previous frame time {prev.t} must precede {frame.t}")
    rows = raw_matrix(np.array([frame.as_tuple(), prev.as_tuple()]))
    return np.concatenate([rows[0], rows[1]])


def derivatives(values: np.ndarray) -> np.ndarray:
    """Backward finite differences of the raw channels, ``(T, 6)``.

    Heading is differenced on the shortest arc.  The first row is zero.
    """
    values = np.asarray(values, dtype=float)
    if len(values) < 2:
        raise TripTooShort("derivatives need at least 2 frames")
    raw = raw_matrix(values)
    diff = np.diff(raw, axis=0)
    diff[:, DIRECTION] = wrap_degrees(diff[:, DIRECTION])
    out = np.zeros_like(raw)
    out[1:] = diff / np.diff(values[:, 0])[:, None]
    return out


@dataclass
class AnomalyModel:
    mu: np.ndarray
    precision: np.ndarray
    channel_names: tuple[str, ...] = CHANNELS
    warnings: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.mu = np.asarray(self.mu, dtype=float)
        self.precision = np.asarray(self.precision, dtype=float)

    def to_dict(self) -> dict:
        return {"mu": self.mu.tolist(), "precision": self.precision.tolist(),
                "channel_names": list(self.channel_names), "warnings": list(self.warnings)}

    @classmethod
    def from_dict(cls, d: dict) -> "AnomalyModel":
        return cls(np.array(d["mu"]), np.array(d["precision"]), tuple(d["channel_names"]),
                   list(d.get("warnings", [])))


def fit_anomaly_model(normal_samples: np.ndarray, alpha: float = 0.1,
                      channel_names: Sequence[str] = CHANNELS) -> AnomalyModel:
    """Fit a sparse Gaussian graphical model by neighbourhood Lasso.

    Channels are standardised before the per-channel regressions, so
    ``alpha`` is on the scale of correlations.  The off-diagonal precision
    entry (i, j) is the average of the estimates from regressing i on the rest
    and j on the rest.  Channels whose residual variance falls below
    ``VARIANCE_FLOOR`` get the floor and a :class:`DegenerateData` warning.
    """
    X = np.asarray(normal_samples, dtype=float)
    n, p = X.shape
    if n < 2 * p:
        raise InsufficientData(f"need at least {2 * p} normal samples to fit {p} channels, got {n}")
    if alpha < 0:
        raise ValueError(f"alpha must be >= 0, got {alpha}")
    notes: list[str] = []
    mu = X.mean(axis=0)
    sd = X.std(axis=0)
    constant = sd < 1e-12
    for j in np.flatnonzero(constant):
        notes.append(f"channel {channel_names[j]} is constant")
    safe_sd = np.where(constant, 1.0, sd)
    Z = (X - mu) / safe_sd

    coef = np.zeros((p, p))  # coef[i, j]: weight of channel j when predicting channel i (original units)
    resid_var = np.zeros(p)
    for i in range(p):
        others = [j for j in range(p) if j != i]
        fit = lasso_fit(LassoProblem(Z[:, others], Z[:, i], alpha))
        resid = Z[:, i] - Z[:, others] @ fit.weights
        resid_var[i] = float(resid @ resid) / n * sd[i] ** 2
        for w, j in zip(fit.weights, others):
            coef[i, j] = 0.0 if constant[j] else w * sd[i] / sd[j]
    floored = resid_var < VARIANCE_FLOOR
    for i in np.flatnonzero(floored & ~constant):
        notes.append(f"channel {channel_names[i]} is predicted exactly by the others")
    resid_var = np.maximum(resid_var, VARIANCE_FLOOR)

    directed = -coef / resid_var[:, None]
    precision = 0.5 * (directed + directed.T)
    np.fill_diagonal(precision, 1.0 / resid_var)
    for msg in notes:
        warnings.warn(f"fit_anomaly_model: {msg}; residual variance floored", DegenerateData, stacklevel=2)
    return AnomalyModel(mu, precision, tuple(channel_names), notes)


def anomaly_scores(x_raw: np.ndarray, model: AnomalyModel) -> np.ndarray:
    """Negative log conditional density of each channel given the others.

    Works on a single 6-vector or on a ``(n, 6)`` matrix.
    """
    x = np.asarray(x_raw, dtype=float)
    lam = np.diag(model.precision)
    # (x_i - conditional mean_i) = (precision @ (x - mu))_i / lam_i
    resid = ((x - model.mu) @ model.precision) / lam
    return 0.5 * np.log(2.0 * np.pi / lam) + 0.5 * lam * resid * resid


@dataclass(frozen=True)
class FeatureConfig:
    include_lag: bool = True
    include_derivatives: bool = True
    include_anomaly: bool = True
    standardize: bool = True

    def __post_init__(self):
        if not (self.include_lag or self.include_derivatives or self.include_anomaly):
            raise ValueError("at least one feature group must be enabled")

    @property
    def names(self) -> tuple[str, ...]:
        names: tuple[str, ...] = ()
        if self.include_lag:
            names += CHANNELS + LAG_NAMES
        if self.include_derivatives:
            names += DERIVATIVE_NAMES
        if self.include_anomaly:
            names += ANOMALY_NAMES
        return names


@dataclass(frozen=True)
class FeatureVector:
    trip_id: str
    t: float
    values: np.ndarray
    names: tuple[str, ...]


@dataclass(eq=False)
class TripFeatures:
    """Feature matrix of one trip: row k belongs to frame k + 1."""

    trip_id: str
    label: TripLabel
    t: np.ndarray
    X: np.ndarray
    names: tuple[str, ...]
    truth: np.ndarray | None = None
    raw: np.ndarray | None = None  # raw channels at t, kept for the anomaly baseline

    def __len__(self) -> int:
        return self.X.shape[0]

    @property
    def is_drowsy(self) -> bool:
        return self.label is TripLabel.DROWSY

    @property
    def vectors(self) -> list[FeatureVector]:
        return [FeatureVector(self.trip_id, float(t), row, self.names) for t, row in zip(self.t, self.X)]

    def with_matrix(self, X: np.ndarray) -> "TripFeatures":
        return TripFeatures(self.trip_id, self.label, self.t, X, self.names, self.truth, self.raw)


def featurize(trip: Trip, model: AnomalyModel | None, config: FeatureConfig = FeatureConfig()) -> TripFeatures:
    if len(trip) < 2:
        raise TripTooShort(f"trip {trip.id} has {len(trip)} frame(s); featurization needs at least 2")
    if config.include_anomaly and model is None:
        raise ValueError("include_anomaly requires a fitted AnomalyModel")
    raw = raw_matrix(trip.values)
    blocks = []
    if config.include_lag:
        blocks += [raw[1:], raw[:-1]]
    if config.include_derivatives:
        blocks.append(derivatives(trip.values)[1:])
    if config.include_anomaly:
        blocks.append(anomaly_scores(raw[1:], model))
    X = np.column_stack(blocks) if len(blocks) > 1 else blocks[0].copy()
    truth = None if trip.truth is None else np.asarray(trip.truth[1:])
    return TripFeatures(trip.id, trip.label, trip.t[1:].copy(), X, config.names, truth, raw[1:])


@dataclass
class Standardizer:
    mean: np.ndarray
    std: np.ndarray

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "Standardizer":
        return cls(np.array(d["mean"], dtype=float), np.array(d["std"], dtype=float))


def _stack(vectors) -> np.ndarray:
    if isinstance(vectors, np.ndarray):
        return np.atleast_2d(vectors)
    rows = []
    for v in vectors:
        if isinstance(v, TripFeatures):
            rows.append(v.X)
        elif isinstance(v, FeatureVector):
            rows.append(v.values[None, :])
        else:
            rows.append(np.atleast_2d(np.asarray(v, dtype=float)))
    return np.vstack(rows)


def fit_standardizer(vectors) -> Standardizer:
    """Per-feature mean and standard deviation (floored at ``STD_FLOOR``).

    Accepts a matrix, feature vectors or :class:`TripFeatures`.
    """
    X = _stack(vectors)
    if X.shape[0] < 2:
        raise ValueError("fit_standardizer needs at least 2 vectors")
    return Standardizer(X.mean(axis=0), np.maximum(X.std(axis=0), STD_FLOOR))


def apply_standardizer(vectors, s: Standardizer):
    """Standardise a matrix, a single vector or a sequence of :class:`TripFeatures`."""
    def scale(X):
        X = np.asarray(X, dtype=float)
        if X.shape[-1] != s.mean.shape[0]:
            raise DimensionMismatch(f"expected {s.mean.shape[0]} features, got {X.shape[-1]}")
        out = (X - s.mean) / s.std
        # constant training features carry no information; keep them at 0
        out[..., s.std <= STD_FLOOR] = 0.0
        return out

    if isinstance(vectors, TripFeatures):
        return vectors.with_matrix(scale(vectors.X))
    if isinstance(vectors, np.ndarray):
        return scale(vectors)
    return [v.with_matrix(scale(v.X)) if isinstance(v, TripFeatures) else scale(v) for v in vectors]


@dataclass
class FeaturePipeline:
    """Fitted preprocessing: anomaly model, feature layout and standardiser."""

    config: FeatureConfig = field(default_factory=FeatureConfig)
    anomaly: AnomalyModel | None = None
    standardizer: Standardizer | None = None
    anomaly_alpha: float = 0.1

    @property
    def names(self) -> tuple[str, ...]:
        return self.config.names

    def fit(self, normal_trips: Iterable[Trip], train_trips: Iterable[Trip]) -> "FeaturePipeline":
        """Fit the anomaly model on ``normal_trips`` and the standardiser on ``train_trips``."""
        normal_trips = list(normal_trips)
        if self.config.include_anomaly or normal_trips:
            raw = np.vstack([raw_matrix(t.values)[1:] for t in normal_trips]) if normal_trips else np.empty((0, 6))
            self.anomaly = fit_anomaly_model(raw, self.anomaly_alpha)
        self.standardizer = None
        if self.config.standardize:
            feats = [featurize(t, self.anomaly, self.config) for t in train_trips]
            self.standardizer = fit_standardizer(feats)
        return self

    def transform(self, trip: Trip) -> TripFeatures:
        feats = featurize(trip, self.anomaly, self.config)
        if self.standardizer is not None:
            feats = apply_standardizer(feats, self.standardizer)
        return feats

    def to_dict(self) -> dict:
        return {
            "config": {"include_lag": self.config.include_lag,
                       "include_derivatives": self.config.include_derivatives,
                       "include_anomaly": self.config.include_anomaly,
                       "standardize": self.config.standardize},
            "anomaly_alpha": self.anomaly_alpha,
            "anomaly": None if self.anomaly is None else self.anomaly.to_dict(),
            "standardizer": None if self.standardizer is None else self.standardizer.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FeaturePipeline":
        return cls(FeatureConfig(**d["config"]),
                   None if d["anomaly"] is None else AnomalyModel.from_dict(d["anomaly"]),
                   None if d["standardizer"] is None else Standardizer.from_dict(d["standardizer"]),
                   d.get("anomaly_alpha", 0.1))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "FeaturePipeline":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def write_features_csv(features: Sequence[TripFeatures], path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    names = features[0].names if features else FeatureConfig().names
    lines = [",".join(("trip_id", "t") + tuple(names))]
    for tf in features:
        for t, row in zip(tf.t, tf.X):
            lines.append(",".join([tf.trip_id, repr(float(t))] + [repr(float(v)) for v in row]))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
