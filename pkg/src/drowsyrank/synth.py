"""Synthetic 1 Hz trips with a planted, monotone drowsiness latent.

Each trip is driven either on a highway or on ordinary roads.  Base channels
are Ornstein-Uhlenbeck (OU) processes around road-dependent means:

* ``speed`` is a cruise speed plus OU noise;
* ``ax`` is OU "jerk noise" plus braking events;
* heading is the road bearing (S-bends) plus an OU lane-keeping deviation, and
  ``ay`` is the centripetal term ``speed * heading rate`` plus sensor noise;
* ``az`` is gravity plus road roughness and potholes.

In a drowsy trip the latent ``d(tau) = drift_amplitude * tau / T`` grows
linearly.  It multiplies the jerk-noise volatility by ``1 + 2 d`` and fires
swerves (a lateral pulse with heading wobble) at ``d * swerve_rate_max`` per
minute.  Normal trips have ``d = 0``.  Timestamps with
``d >= truth_threshold`` are labelled drowsy.

Road type is the confounder: drowsy trips are more often highway trips, while
ordinary roads are rougher, with more braking and sharper bends.  Potholes hit
every road alike.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from drowsyrank.data import Dataset, Trip, TripLabel, write_manifest, write_trip_csv

GRAVITY = 9.81


@dataclass(frozen=True)
class OUParams:
    rate: float
    volatility: float


def _default_noise() -> dict[str, OUParams]:
    return {
        "jerk": OUParams(0.35, 0.12),
        "heading": OUParams(0.2, 0.3),
        "lateral": OUParams(0.5, 0.06),
        "vertical": OUParams(0.6, 0.05),
        "cruise": OUParams(0.3, 0.4),
    }


@dataclass(frozen=True)
class SynthConfig:
    n_drowsy: int = 12
    n_normal: int = 90
    trip_len_range: tuple[int, int] = (600, 1800)
    seed: int = 42
    base_noise: dict[str, OUParams] = field(default_factory=_default_noise)
    drift_amplitude: float = 1.0
    swerve_rate_max: float = 30.0
    truth_threshold: float = 0.5
    highway_prob_drowsy: float = 0.85
    highway_prob_normal: float = 0.25
    curve_rate: float = 0.5
    brake_rate: float = 0.3
    pothole_rate: float = 0.3

    def __post_init__(self):
        if self.n_drowsy < 0 or self.n_normal < 0:
            raise ValueError("trip counts must be >= 0")
        lo, hi = self.trip_len_range
        if not (2 <= lo <= hi):
            raise ValueError(f"trip_len_range must satisfy 2 <= min <= max, got {self.trip_len_range}")
        if self.drift_amplitude < 0:
            raise ValueError("drift_amplitude must be >= 0")
        rates = (self.swerve_rate_max, self.curve_rate, self.brake_rate, self.pothole_rate)
        if min(rates) < 0:
            raise ValueError("event rates must be >= 0")
        if not 0 < self.truth_threshold < 1:
            raise ValueError("truth_threshold must lie in (0, 1)")
        for p in (self.highway_prob_drowsy, self.highway_prob_normal):
            if not 0 <= p <= 1:
                raise ValueError("highway probabilities must lie in [0, 1]")

    def echo(self) -> str:
        d = asdict(self)
        lines = []
        for key, value in d.items():
            if key == "base_noise":
                for ch, par in value.items():
                    lines.append(f"base_noise.{ch}={par['rate']!r},{par['volatility']!r}")
            elif key == "trip_len_range":
                lines.append(f"{key}={value[0]},{value[1]}")
            else:
                lines.append(f"{key}={value!r}")
        return "\n".join(lines) + "\n"


def _ou(rng, n, rate, vol, scale=None, x0=0.0):
    """Discrete OU path ``x[k+1] = x[k] - rate * x[k] + vol * scale[k] * eps``."""
    eps = rng.standard_normal(n)
    if scale is not None:
        eps = eps * scale
    x = np.empty(n)
    prev = x0
    keep = 1.0 - rate
    for k in range(n):
        prev = keep * prev + vol * eps[k]
        x[k] = prev
    return x


def _events(rng, rate_per_min: np.ndarray) -> np.ndarray:
    """Event onsets from a Poisson process with per-second rate ``rate_per_min / 60``."""
    return np.flatnonzero(rng.random(len(rate_per_min)) < rate_per_min / 60.0)


def latent_drowsiness(n: int, label: TripLabel, amplitude: float) -> np.ndarray:
    if label is TripLabel.NORMAL:
        return np.zeros(n)
    return amplitude * np.arange(n) / n


def generate_trip(rng: np.random.Generator, label: TripLabel, config: SynthConfig = SynthConfig(),
                  trip_id: str = "trip", length: int | None = None) -> Trip:
    lo, hi = config.trip_len_range
    n = int(rng.integers(lo, hi + 1)) if length is None else int(length)
    noise = config.base_noise
    d = latent_drowsiness(n, label, config.drift_amplitude)
    hw_prob = config.highway_prob_drowsy if label is TripLabel.DROWSY else config.highway_prob_normal
    highway = bool(rng.random() < hw_prob)

    # drowsiness effects
    heading_kick = np.zeros(n)
    for k in _events(rng, d * config.swerve_rate_max):
        amp = rng.choice((-1.0, 1.0)) * rng.uniform(1.5, 3.0)
        seg = amp * np.array([1.0, 1.0, -1.2, -1.0, 0.2])
        end = min(n, k + len(seg))
        heading_kick[k:end] += seg[:end - k]

    # longitudinal
    cruise_mean = rng.uniform(24.0, 30.0) if highway else rng.uniform(10.0, 16.0)
    speed = np.maximum(0.0, cruise_mean + _ou(rng, n, noise["cruise"].rate, noise["cruise"].volatility))
    ax = _ou(rng, n, noise["jerk"].rate, noise["jerk"].volatility, scale=1.0 + 2.0 * d)
    for k in _events(rng, np.full(n, config.brake_rate * (0.3 if highway else 1.0))):
        dur = int(rng.integers(3, 7))
        pulse = rng.uniform(0.2, 0.5) * np.hanning(dur + 2)[1:-1]
        ax[k:k + dur] -= pulse[:n - k]

    # lateral: heading = road bearing + lane-keeping deviation
    bearing_rate = np.zeros(n)
    for k in _events(rng, np.full(n, config.curve_rate)):
        # S-bend: turn, then turn back, so the bearing has no long-run drift
        dur = int(rng.integers(20, 40)) if highway else int(rng.integers(10, 20))
        angle = rng.uniform(5.0, 15.0) if highway else rng.uniform(10.0, 30.0)
        sign = rng.choice((-1.0, 1.0))
        bearing_rate[k:k + dur] += sign * angle / dur
        bearing_rate[k + dur:k + 2 * dur] -= sign * angle / dur
    deviation = _ou(rng, n, noise["heading"].rate, noise["heading"].volatility) + np.cumsum(heading_kick)
    heading = rng.uniform(0.0, 360.0) + np.cumsum(bearing_rate) + deviation
    heading_rate = np.r_[0.0, np.diff(heading)]
    direction = np.mod(heading, 360.0)
    ay = speed * np.deg2rad(heading_rate) + _ou(rng, n, noise["lateral"].rate, noise["lateral"].volatility)

    # vertical
    rough = noise["vertical"].volatility * (1.0 if highway else 2.0)
    az = GRAVITY + _ou(rng, n, noise["vertical"].rate, rough)
    for k in _events(rng, np.full(n, config.pothole_rate)):
        az[k] += rng.choice((-1.0, 1.0)) * rng.uniform(6.0, 12.0)

    t = np.arange(n, dtype=float)
    values = np.column_stack([t, ax, ay, az, speed, direction])
    # heading can round to exactly 360.0 after np.mod on tiny negatives
    values[:, 5] = np.where(values[:, 5] >= 360.0, 0.0, values[:, 5])
    truth = (d >= config.truth_threshold).astype(np.int8) if label is TripLabel.DROWSY else np.zeros(n, np.int8)
    return Trip(trip_id, label, values, truth)


def generate_dataset(config: SynthConfig = SynthConfig(), out_dir: str | Path | None = None) -> Dataset:
    """Generate ``n_drowsy + n_normal`` trips; optionally write them to ``out_dir``.

    Files written: ``trips/<id>.csv`` per trip, ``manifest.csv`` and
    ``synth-config.txt``.  Each trip gets its own child seed, so trip k is the
    same whatever the other counts are.
    """
    labels = [TripLabel.DROWSY] * config.n_drowsy + [TripLabel.NORMAL] * config.n_normal
    ids = [f"drowsy_{k:03d}" for k in range(config.n_drowsy)] + [f"normal_{k:03d}" for k in range(config.n_normal)]
    root = np.random.SeedSequence(config.seed)
    drowsy_seeds = np.random.SeedSequence(root.generate_state(1)[0], spawn_key=(1,)).spawn(config.n_drowsy)
    normal_seeds = np.random.SeedSequence(root.generate_state(1)[0], spawn_key=(2,)).spawn(config.n_normal)
    trips = [generate_trip(np.random.default_rng(s), lab, config, tid)
             for s, lab, tid in zip(drowsy_seeds + normal_seeds, labels, ids)]
    dataset = Dataset(trips)
    if out_dir is not None:
        write_dataset(dataset, out_dir, config)
    return dataset


def write_dataset(dataset: Dataset, out_dir: str | Path, config: SynthConfig | None = None) -> Path:
    out = Path(out_dir)
    (out / "trips").mkdir(parents=True, exist_ok=True)
    entries = []
    for trip in dataset:
        rel = f"trips/{trip.id}.csv"
        write_trip_csv(trip, out / rel)
        entries.append((rel, trip.label))
    manifest = out / "manifest.csv"
    write_manifest(entries, manifest)
    if config is not None:
        (out / "synth-config.txt").write_text(config.echo(), encoding="utf-8")
    return manifest
