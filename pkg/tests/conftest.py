from __future__ import annotations

import numpy as np
import pytest

from drowsyrank.data import Trip, TripLabel
from drowsyrank.features import TripFeatures
from drowsyrank.synth import SynthConfig, generate_dataset


def make_trip(rows, label=TripLabel.NORMAL, trip_id="trip", truth=None) -> Trip:
    return Trip(trip_id, label, np.asarray(rows, dtype=float), truth)


def random_features(rng: np.random.Generator, n: int, dim: int, trip_id: str = "f",
                    label=TripLabel.DROWSY) -> TripFeatures:
    t = np.cumsum(rng.uniform(0.5, 2.0, n))
    X = rng.standard_normal((n, dim))
    names = tuple(f"x{j}" for j in range(dim))
    return TripFeatures(trip_id, label, t, X, names)


@pytest.fixture(scope="session")
def small_config() -> SynthConfig:
    return SynthConfig(n_drowsy=4, n_normal=6, trip_len_range=(150, 250), seed=7)


@pytest.fixture(scope="session")
def small_dataset(small_config):
    return generate_dataset(small_config)


@pytest.fixture(scope="session")
def small_data_dir(tmp_path_factory, small_config):
    out = tmp_path_factory.mktemp("small")
    generate_dataset(small_config, out)
    return out


@pytest.fixture(scope="session")
def acceptance_lines(pytestconfig) -> list[str]:
    lines: list[str] = []
    pytestconfig._acceptance_lines = lines
    return lines


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = getattr(config, "_acceptance_lines", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
