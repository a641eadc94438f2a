"""Pairwise time-ordered ranking of drowsiness scores.

A linear scorer ``f(x) = theta . x`` is trained on drowsy trips only.  For two
samples of the same trip taken at times ``t != u`` the loss is

    max(0, 1 - sgn(t - u) * (f(x_t) - f(x_u)))

i.e. the later sample should out-score the earlier one by a margin of one.
Training draws one random trip and one random pair of its samples per step,
forms the hinge subgradient plus the gradient of ``lambda * ||theta||^2`` and
hands it to SGD or Adam.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence, Union

import numpy as np

from drowsyrank.errors import DimensionMismatch, EqualTimestamps, ModelFormatError, NoValidPair
from drowsyrank.features import TripFeatures

MODEL_TAG = "drowsyrank-model v1"
DEFAULT_LAMBDA_GRID = (0.0, 1e-4, 1e-3, 1e-2)
MAX_GAP_RETRIES = 32


@dataclass
class LinearModel:
    theta: np.ndarray
    lam: float = 0.0
    feature_names: tuple[str, ...] = ()

    def __post_init__(self):
        self.theta = np.asarray(self.theta, dtype=float)
        if not self.feature_names:
            self.feature_names = tuple(f"x{j}" for j in range(self.theta.shape[0]))
        self.feature_names = tuple(self.feature_names)
        if len(self.feature_names) != self.theta.shape[0]:
            raise DimensionMismatch("one feature name per weight required")
        if self.lam < 0:
            raise ValueError(f"lambda must be >= 0, got {self.lam}")

    @property
    def dim(self) -> int:
        return self.theta.shape[0]

    def save(self, path: str | Path) -> None:
        lines = [MODEL_TAG, f"D={self.dim} lambda={self.lam!r}"]
        lines += [f"{name} {float(w)!r}" for name, w in zip(self.feature_names, self.theta)]
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "LinearModel":
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        if not lines or lines[0].strip() != MODEL_TAG:
            raise ModelFormatError(f"{path}: not a {MODEL_TAG!r} file")
        try:
            header = dict(tok.split("=", 1) for tok in lines[1].split())
            dim, lam = int(header["D"]), float(header["lambda"])
            rows = [ln.rsplit(" ", 1) for ln in lines[2:2 + dim]]
            names = tuple(r[0] for r in rows)
            theta = np.array([float(r[1]) for r in rows])
        except (IndexError, KeyError, ValueError) as exc:
            raise ModelFormatError(f"{path}: malformed model file ({exc})") from None
        if len(theta) != dim:
            raise ModelFormatError(f"{path}: expected {dim} weights, found {len(theta)}")
        return cls(theta, lam, names)


def _values(x) -> np.ndarray:
    return np.asarray(getattr(x, "values", x), dtype=float)


def score(model: LinearModel, x) -> float | np.ndarray:
    """theta . x for one vector, or row-wise for a matrix."""
    v = _values(x)
    if v.shape[-1] != model.dim:
        raise DimensionMismatch(f"model has {model.dim} weights, input has {v.shape[-1]} features")
    return v @ model.theta


def _order_sign(t: float, u: float) -> float:
    if t == u:
        raise EqualTimestamps(f"pair needs distinct timestamps, got t = u = {t}")
    return 1.0 if t > u else -1.0


def pair_loss(model: LinearModel, x_t, t: float, x_u, u: float) -> float:
    s = _order_sign(t, u)
    return max(0.0, 1.0 - s * (score(model, x_t) - score(model, x_u)))


def pair_subgradient(model: LinearModel, x_t, t: float, x_u, u: float) -> np.ndarray:
    """Subgradient of the pair loss plus ``lambda * ||theta||^2``.

    At the kink (margin exactly 1) the hinge contributes nothing.
    """
    s = _order_sign(t, u)
    diff = _values(x_t) - _values(x_u)
    if diff.shape[-1] != model.dim:
        raise DimensionMismatch(f"model has {model.dim} weights, input has {diff.shape[-1]} features")
    grad = 2.0 * model.lam * model.theta
    if 1.0 - s * float(diff @ model.theta) > 0.0:
        grad = grad - s * diff
    return grad


@dataclass(frozen=True)
class PairDraw:
    trip: int
    t: int
    u: int


def _trip_times(trips: Sequence[TripFeatures]) -> list[np.ndarray]:
    return [np.asarray(tf.t, dtype=float) for tf in trips]


def _eligible_trips(times: list[np.ndarray], min_time_gap: float) -> np.ndarray:
    ok = [len(ts) >= 2 and ts[-1] - ts[0] >= min_time_gap for ts in times]
    return np.flatnonzero(ok)


def sample_pairs(rng: np.random.Generator, trips: Sequence[TripFeatures], min_time_gap: float,
                 size: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Draw ``size`` pairs: arrays of trip index, first index, second index.

    The trip is uniform over trips that admit at least one pair; ``(t, u)``
    is uniform over ordered index pairs with ``t != u``.  Pairs closer in
    time than ``min_time_gap`` are redrawn within the trip a bounded number
    of times, after which the trip itself is redrawn.
    """
    times = _trip_times(trips)
    eligible = _eligible_trips(times, min_time_gap)
    if eligible.size == 0:
        raise NoValidPair(f"no drowsy trip has two samples at least {min_time_gap} s apart")
    lengths = np.array([len(ts) for ts in times])
    ti = eligible[rng.integers(0, eligible.size, size)]
    n = lengths[ti]
    a = rng.integers(0, n)
    b = rng.integers(0, n - 1)
    b = b + (b >= a)
    if min_time_gap > 0:
        for k in range(size):
            tries = 0
            while abs(times[ti[k]][a[k]] - times[ti[k]][b[k]]) < min_time_gap:
                tries += 1
                if tries % MAX_GAP_RETRIES == 0:
                    ti[k] = eligible[rng.integers(eligible.size)]
                m = len(times[ti[k]])
                a[k] = rng.integers(m)
                b[k] = rng.integers(m - 1)
                b[k] += b[k] >= a[k]
    return ti, a, b


def sample_pair(rng: np.random.Generator, trips: Sequence[TripFeatures], min_time_gap: float = 0.0) -> PairDraw:
    ti, a, b = sample_pairs(rng, trips, min_time_gap, 1)
    return PairDraw(int(ti[0]), int(a[0]), int(b[0]))


def _trip_pair_losses(s: np.ndarray, times: np.ndarray) -> np.ndarray:
    """Hinge losses of all unordered pairs of one trip, in (i < j) row-major order."""
    order = np.sign(times[None, :] - times[:, None])
    iu = np.triu_indices(len(s), k=1)
    margin = order[iu] * (s[None, :] - s[:, None])[iu]
    return np.maximum(0.0, 1.0 - margin)


def empirical_loss(model: LinearModel, trips: Sequence[TripFeatures], subsample: int | None = None,
                   rng: np.random.Generator | None = None, min_time_gap: float = 0.0) -> float:
    """Mean over trips of the mean pair loss over all within-trip pairs.

    With ``subsample`` set, a Monte Carlo estimate from that many pairs
    drawn by :func:`sample_pairs`.
    """
    if subsample is not None:
        if rng is None:
            raise ValueError("subsample mode needs an rng")
        ti, a, b = sample_pairs(rng, trips, min_time_gap, subsample)
        return _pairs_loss(model.theta, trips, ti, a, b)
    per_trip = []
    for tf in trips:
        if len(tf) < 2:
            continue
        losses = _trip_pair_losses(tf.X @ model.theta, np.asarray(tf.t, dtype=float))
        if min_time_gap > 0:
            ts = np.asarray(tf.t, dtype=float)
            iu = np.triu_indices(len(ts), k=1)
            losses = losses[np.abs(ts[iu[1]] - ts[iu[0]]) >= min_time_gap]
        if losses.size:
            per_trip.append(losses.mean())
    if not per_trip:
        raise NoValidPair("no trip admits a valid pair")
    return float(np.mean(per_trip))


# -- external optimisers ------------------------------------------------------

@dataclass(frozen=True)
class Sgd:
    learning_rate: float = 0.01
    decay: float = 0.0

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0")
        if self.decay < 0:
            raise ValueError("decay must be >= 0")


@dataclass(frozen=True)
class Adam:
    learning_rate: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0")
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ValueError("Adam betas must lie in (0, 1)")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be > 0")


Optimizer = Union[Sgd, Adam]


@dataclass
class OptimizerState:
    step: int = 0
    m: np.ndarray | None = None
    v: np.ndarray | None = None

    @classmethod
    def for_optimizer(cls, optimizer: Optimizer, dim: int | tuple[int, ...]) -> "OptimizerState":
        if isinstance(optimizer, Adam):
            return cls(0, np.zeros(dim), np.zeros(dim))
        return cls(0)


def optimizer_step(state: OptimizerState, theta: np.ndarray, grad: np.ndarray,
                   optimizer: Optimizer) -> tuple[np.ndarray, OptimizerState]:
    """One update of ``theta`` with gradient ``grad``.

    SGD uses ``lr / (1 + decay * k)`` with ``k`` the number of updates already
    applied.  Adam is the usual bias-corrected moment update.  ``state`` is
    updated in place and returned alongside the new weights.
    """
    theta = np.asarray(theta, dtype=float)
    grad = np.asarray(grad, dtype=float)
    if theta.shape != grad.shape:
        raise DimensionMismatch(f"theta {theta.shape} and gradient {grad.shape} disagree")
    if isinstance(optimizer, Sgd):
        eta = optimizer.learning_rate / (1.0 + optimizer.decay * state.step)
        state.step += 1
        return theta - eta * grad, state
    if state.m is None:
        state.m, state.v = np.zeros_like(theta), np.zeros_like(theta)
    b1, b2 = optimizer.beta1, optimizer.beta2
    state.step += 1
    state.m *= b1
    state.m += (1.0 - b1) * grad
    state.v *= b2
    state.v += (1.0 - b2) * grad * grad
    m_hat = state.m / (1.0 - b1 ** state.step)
    v_hat = state.v / (1.0 - b2 ** state.step)
    return theta - optimizer.learning_rate * m_hat / (np.sqrt(v_hat) + optimizer.epsilon), state


@dataclass(frozen=True)
class TrainConfig:
    iterations: int = 200_000
    seed: int = 0
    optimizer: Optimizer = field(default_factory=lambda: Sgd(0.01, 0.01))
    min_time_gap: float = 0.0
    loss_report_every: int = 20_000
    loss_subsample: int = 2_000

    def __post_init__(self):
        if not (isinstance(self.iterations, int) and self.iterations >= 1):
            raise ValueError(f"iterations must be a positive integer, got {self.iterations!r}")
        if self.min_time_gap < 0:
            raise ValueError("min_time_gap must be >= 0")
        if self.loss_report_every < 1:
            raise ValueError("loss_report_every must be >= 1")


@dataclass
class TrainResult:
    model: LinearModel
    log: list[tuple[int, float]]
    trip_ids: list[str]

    def write_log(self, path: str | Path) -> None:
        lines = ["step,subsampled_loss"] + [f"{step},{loss!r}" for step, loss in self.log]
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


BLOCK = 4096


class _Stack:
    """All trips' feature rows and timestamps in single arrays, for vectorised pair lookups."""

    def __init__(self, trips: Sequence[TripFeatures]):
        self.X = np.vstack([tf.X for tf in trips])
        self.t = np.concatenate([tf.t for tf in trips])
        self.offset = np.cumsum([0] + [len(tf) for tf in trips[:-1]])

    def signed_diffs(self, ti, a, b) -> np.ndarray:
        """Rows ``x_later - x_earlier`` for each drawn pair."""
        ia, ib = self.offset[ti] + a, self.offset[ti] + b
        sign = np.where(self.t[ia] > self.t[ib], 1.0, -1.0)
        return sign[:, None] * (self.X[ia] - self.X[ib])


def _pairs_loss(theta, trips, ti, a, b) -> float:
    diffs = _Stack(trips).signed_diffs(ti, a, b)
    return float(np.maximum(0.0, 1.0 - diffs @ theta).mean())


def _fit(trips: list[TripFeatures], config: TrainConfig, lams: np.ndarray,
         log: list[tuple[int, float]] | None) -> np.ndarray:
    """Run the training loop for every lambda in ``lams`` at once.

    Row ``g`` of the returned matrix is the weight vector for ``lams[g]``.  All
    rows see the same pair draws, so each equals a separate run with that
    lambda and seed.  ``log`` (if given) tracks row 0.
    """
    if not trips:
        raise NoValidPair("training needs at least one drowsy trip with two or more feature vectors")
    if np.any(lams < 0):
        raise ValueError(f"lambda must be >= 0, got {lams.min()}")
    dim = trips[0].X.shape[1]
    theta = np.zeros((len(lams), dim))
    opt = config.optimizer
    state = OptimizerState.for_optimizer(opt, theta.shape)
    seeds = np.random.SeedSequence(config.seed).spawn(2)
    rng, log_rng = np.random.default_rng(seeds[0]), np.random.default_rng(seeds[1])
    stack = _Stack(trips)

    def report(step: int) -> None:
        if log is not None:
            pairs = sample_pairs(log_rng, trips, config.min_time_gap, config.loss_subsample)
            loss = float(np.maximum(0.0, 1.0 - stack.signed_diffs(*pairs) @ theta[0]).mean())
            log.append((step, loss))

    # fails early with NoValidPair when nothing can be drawn
    sample_pairs(np.random.default_rng(0), trips, config.min_time_gap, 1)
    report(0)

    two_lam = 2.0 * lams[:, None]
    step = 0
    while step < config.iterations:
        size = min(BLOCK, config.iterations - step)
        diffs = stack.signed_diffs(*sample_pairs(rng, trips, config.min_time_gap, size))
        for d in diffs:
            grad = two_lam * theta
            grad -= (theta @ d < 1.0)[:, None] * d
            theta, state = optimizer_step(state, theta, grad, opt)
            step += 1
            if step % config.loss_report_every == 0 and step != config.iterations:
                report(step)
    report(step)
    return theta


def train(drowsy_trips: Sequence[TripFeatures], config: TrainConfig = TrainConfig(), lam: float = 0.0,
          *, return_log: bool = False) -> LinearModel | TrainResult:
    """Stochastic optimisation of the pairwise hinge objective.

    Starts from ``theta = 0`` and runs exactly ``config.iterations`` updates.
    Every ``loss_report_every`` steps (and at steps 0 and the end) the loss is
    estimated on ``loss_subsample`` pairs drawn from a separate generator so
    logging does not perturb the training draws.
    """
    trips = list(drowsy_trips)
    log: list[tuple[int, float]] = []
    theta = _fit(trips, config, np.array([float(lam)]), log if return_log else None)[0]
    model = LinearModel(theta, lam, trips[0].names)
    if return_log:
        return TrainResult(model, log, [tf.trip_id for tf in trips])
    return model


def train_grid(drowsy_trips: Sequence[TripFeatures], config: TrainConfig, lams: Sequence[float]) -> list[LinearModel]:
    """One model per lambda, trained in lockstep on a shared pair stream."""
    trips = list(drowsy_trips)
    thetas = _fit(trips, config, np.asarray(lams, dtype=float), None)
    return [LinearModel(th, lam, trips[0].names) for th, lam in zip(thetas, lams)]


def report_weights(model: LinearModel) -> list[tuple[str, float]]:
    """Features ordered by absolute weight, largest first; ties broken by name."""
    pairs = [(name, float(w)) for name, w in zip(model.feature_names, model.theta)]
    return sorted(pairs, key=lambda nw: (-abs(nw[1]), nw[0]))


def select_lambda(trips: Sequence[TripFeatures], grid: Sequence[float], config: TrainConfig,
                  k: int = 3) -> tuple[float, dict[float, float]]:
    """Pick lambda by k-fold cross-validation over drowsy trips.

    Each candidate is trained on k-1 folds and scored by the exact mean pair
    loss on the held-out trips; the smallest mean wins (ties go to the larger
    lambda).  With fewer than two trips the first grid value is returned.
    """
    grid = list(grid)
    if len(grid) == 1 or len(trips) < 2:
        return grid[0], {}
    k = min(k, len(trips))
    folds = [list(range(j, len(trips), k)) for j in range(k)]
    losses = np.zeros((k, len(grid)))
    for j, held in enumerate(folds):
        held_set = set(held)
        train_trips = [tf for i, tf in enumerate(trips) if i not in held_set]
        cfg = TrainConfig(config.iterations, config.seed + j, config.optimizer, config.min_time_gap,
                          config.iterations, config.loss_subsample)
        for g, model in enumerate(train_grid(train_trips, cfg, grid)):
            losses[j, g] = empirical_loss(model, [trips[i] for i in held], min_time_gap=config.min_time_gap)
    errors = {lam: float(m) for lam, m in zip(grid, losses.mean(axis=0))}
    best = min(grid, key=lambda lam: (errors[lam], -lam))
    return best, errors

