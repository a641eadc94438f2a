from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from drowsyrank.data import SensorFrame, TripLabel
from drowsyrank.errors import DegenerateData, DimensionMismatch, InsufficientData, TripTooShort
from drowsyrank.features import (
    ANOMALY_NAMES, HALF_LOG_2PI, AnomalyModel, FeatureConfig, FeaturePipeline, apply_standardizer, anomaly_scores,
    derivatives, featurize, fit_anomaly_model, fit_standardizer, raw_channels, wrap_degrees, write_features_csv,
)
from conftest import make_trip
from oracles import backward_derivatives, conditional_nll


def frame(t, ax=0.0, ay=0.0, az=0.0, speed=10.0, direction=0.0):
    return SensorFrame(t, ax, ay, az, speed, direction)


# -- raw channels and derivatives ------------------------------------------------

def test_magnitude_345():
    out = raw_channels(frame(1, 3, 4, 0), frame(0, 3, 4, 0))
    assert out[3] == 5.0 and out[9] == 5.0


def test_zero_acceleration_magnitude():
    assert raw_channels(frame(1), frame(0))[3] == 0.0


def test_channel_order():
    out = raw_channels(frame(2, 1, 2, 3, 20, 45), frame(1, -1, -2, -3, 10, 90))
    assert out[:6].tolist() == [1, 2, 3, math.sqrt(14), 20, 45]
    assert out[6:].tolist() == [-1, -2, -3, math.sqrt(14), 10, 90]


def test_raw_channels_needs_ordered_frames():
    with pytest.raises(ValueError):
        raw_channels(frame(1), frame(1))


def test_constant_channels_have_zero_derivative():
    rows = [[k, 0.1, 0.2, 9.8, 12.0, 30.0] for k in range(5)]
    assert np.all(derivatives(np.array(rows)) == 0.0)


def test_direction_wraparound():
    rows = np.array([[0, 0, 0, 9.8, 10, 359.0], [1, 0, 0, 9.8, 10, 1.0]])
    assert derivatives(rows)[1, 5] == pytest.approx(2.0)
    back = np.array([[0, 0, 0, 9.8, 10, 1.0], [1, 0, 0, 9.8, 10, 359.0]])
    assert derivatives(back)[1, 5] == pytest.approx(-2.0)


def test_x_jerk():
    rows = np.array([[0, 0.2, 0, 9.8, 10, 0], [1, 0.5, 0, 9.8, 10, 0]])
    assert derivatives(rows)[1, 0] == pytest.approx(0.3)


def test_derivatives_match_loop_oracle():
    rng = np.random.default_rng(0)
    t = np.cumsum(rng.uniform(0.5, 2.0, 40))
    rows = np.column_stack([t, rng.normal(0, 1, (40, 3)) + [0, 0, 9.8], rng.uniform(0, 30, 40),
                            rng.uniform(0, 360, 40)])
    np.testing.assert_allclose(derivatives(rows), backward_derivatives(rows.tolist()), atol=1e-12)


def test_derivatives_need_two_frames():
    with pytest.raises(TripTooShort):
        derivatives(np.zeros((1, 6)))


@settings(max_examples=200)
@given(st.floats(0, 360, exclude_max=True), st.floats(0, 360, exclude_max=True))
def test_wraparound_antisymmetry(a, b):
    fwd, rev = float(wrap_degrees(b - a)), float(wrap_degrees(a - b))
    assert -180.0 < fwd <= 180.0
    if abs(fwd) != 180.0:
        assert fwd == pytest.approx(-rev, abs=1e-9)


# -- anomaly model ---------------------------------------------------------------------

def test_independent_channels_give_identity_precision():
    X = np.random.default_rng(1).standard_normal((10_000, 6))
    model = fit_anomaly_model(X, alpha=0.5)
    off = model.precision - np.diag(np.diag(model.precision))
    assert np.abs(off).max() < 0.05
    np.testing.assert_allclose(np.diag(model.precision), 1.0, atol=0.05)


def test_precision_symmetric_with_positive_diagonal():
    rng = np.random.default_rng(2)
    X = rng.standard_normal((500, 6)) @ rng.standard_normal((6, 6)) + rng.normal(0, 5, 6)
    model = fit_anomaly_model(X, alpha=0.05)
    assert np.abs(model.precision - model.precision.T).max() <= 1e-10
    assert np.all(np.diag(model.precision) > 0)


def test_perfectly_correlated_channels_hit_variance_floor():
    rng = np.random.default_rng(3)
    X = rng.standard_normal((200, 3))
    X[:, 1] = 2.0 * X[:, 0]
    with pytest.warns(DegenerateData):
        model = fit_anomaly_model(X, alpha=0.0, channel_names=("a", "b", "c"))
    assert np.all(np.isfinite(model.precision))
    assert model.warnings


def test_constant_channel_warns():
    rng = np.random.default_rng(4)
    X = rng.standard_normal((100, 6))
    X[:, 2] = 9.81
    with pytest.warns(DegenerateData, match="constant"):
        model = fit_anomaly_model(X)
    assert np.all(np.isfinite(model.precision))


def test_too_few_samples():
    with pytest.raises(InsufficientData):
        fit_anomaly_model(np.zeros((11, 6)))


def test_score_at_mean_identity():
    model = AnomalyModel(np.zeros(6), np.eye(6))
    np.testing.assert_allclose(anomaly_scores(np.zeros(6), model), 0.5 * math.log(2 * math.pi))
    assert HALF_LOG_2PI == pytest.approx(0.9189385, abs=1e-7)


def test_unit_residual_identity():
    mu = np.arange(6.0)
    s = anomaly_scores(mu + np.eye(6)[2], AnomalyModel(mu, np.eye(6)))
    assert s[2] == pytest.approx(HALF_LOG_2PI + 0.5)
    assert s[0] == pytest.approx(HALF_LOG_2PI)


def test_correlated_conforming_vs_violating():
    model = AnomalyModel(np.zeros(2), np.array([[2.0, -1.0], [-1.0, 2.0]]), ("a", "b"))
    conforming = anomaly_scores(np.array([1.0, 1.0]), model)
    violating = anomaly_scores(np.array([1.0, -1.0]), model)
    # x_a | x_b ~ N(x_b / 2, 1/2)
    np.testing.assert_allclose(conforming, 0.5 * math.log(math.pi) + 0.25)
    np.testing.assert_allclose(violating, 0.5 * math.log(math.pi) + 2.25)
    assert np.all(violating > conforming)


def test_scores_match_covariance_oracle():
    rng = np.random.default_rng(5)
    A = rng.standard_normal((6, 6))
    precision = A @ A.T + 0.5 * np.eye(6)
    mu = rng.standard_normal(6)
    model = AnomalyModel(mu, precision)
    for _ in range(20):
        x = mu + rng.standard_normal(6)
        np.testing.assert_allclose(anomaly_scores(x, model), conditional_nll(x, mu, precision), rtol=1e-9)


def test_scores_vectorised_rows():
    rng = np.random.default_rng(6)
    model = AnomalyModel(rng.standard_normal(6), np.eye(6) * 2)
    X = rng.standard_normal((5, 6))
    np.testing.assert_allclose(anomaly_scores(X, model), np.array([anomaly_scores(x, model) for x in X]))


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-100, 100), min_size=6, max_size=6), st.integers(0, 2**31))
def test_anomaly_translation_consistency(shift, seed):
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((6, 6))
    precision = A @ A.T + np.eye(6)
    mu = rng.standard_normal(6)
    x = rng.standard_normal((4, 6))
    shift = np.array(shift)
    base = anomaly_scores(x, AnomalyModel(mu, precision))
    moved = anomaly_scores(x + shift, AnomalyModel(mu + shift, precision))
    np.testing.assert_allclose(moved, base, rtol=1e-7, atol=1e-7)


# -- featurize and standardizer --------------------------------------------------------

def _rows(n, seed=0):
    rng = np.random.default_rng(seed)
    return np.column_stack([np.arange(n, dtype=float), rng.normal(0, 1, (n, 2)), 9.8 + rng.normal(0, 1, n),
                            rng.uniform(5, 20, n), rng.uniform(0, 360, n)])


def _identity_model():
    return AnomalyModel(np.zeros(6), np.eye(6))


def test_two_frame_trip_gives_one_24_vector():
    tf = featurize(make_trip(_rows(2)), _identity_model())
    assert tf.X.shape == (1, 24)
    assert len(set(tf.names)) == 24
    assert tf.names[-6:] == ANOMALY_NAMES


def test_ten_frame_trip_gives_nine_vectors():
    tf = featurize(make_trip(_rows(10)), _identity_model())
    assert len(tf) == 9 and len(tf.vectors) == 9
    assert tf.t.tolist() == list(range(1, 10))


def test_derivatives_only():
    cfg = FeatureConfig(include_lag=False, include_anomaly=False)
    tf = featurize(make_trip(_rows(5)), None, cfg)
    assert tf.X.shape == (4, 6)
    np.testing.assert_array_equal(tf.X, derivatives(_rows(5))[1:])


def test_feature_layout():
    rows = _rows(6)
    tf = featurize(make_trip(rows), _identity_model())
    raw0 = raw_channels(SensorFrame(*rows[3]), SensorFrame(*rows[2]))
    np.testing.assert_allclose(tf.X[2, :12], raw0)
    np.testing.assert_allclose(tf.X[2, 18:], anomaly_scores(raw0[:6], _identity_model()))


def test_featurize_errors():
    with pytest.raises(TripTooShort):
        featurize(make_trip(_rows(1)), _identity_model())
    with pytest.raises(ValueError):
        featurize(make_trip(_rows(3)), None)
    with pytest.raises(ValueError):
        FeatureConfig(False, False, False)


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 60))
def test_featurize_count(n):
    assert len(featurize(make_trip(_rows(n, n)), _identity_model())) == n - 1


def test_standardizer_moments():
    X = np.random.default_rng(7).normal(3.0, 5.0, (200, 4))
    Z = apply_standardizer(X, fit_standardizer(X))
    assert np.abs(Z.mean(axis=0)).max() <= 1e-9
    assert np.abs(Z.std(axis=0) - 1.0).max() <= 1e-9


def test_constant_column_maps_to_zero():
    X = np.column_stack([np.arange(5.0), np.full(5, 4.2)])
    s = fit_standardizer(X)
    assert s.std[1] >= 1e-8
    Z = apply_standardizer(X, s)
    assert np.all(Z[:, 1] == 0.0) and np.all(np.isfinite(Z))


def test_held_out_vector():
    from drowsyrank.features import Standardizer
    s = Standardizer(np.array([3.0, 0.0]), np.array([2.0, 1.0]))
    assert apply_standardizer(np.array([5.0, 7.0]), s)[0] == 1.0


def test_standardizer_errors():
    with pytest.raises(ValueError):
        fit_standardizer(np.ones((1, 3)))
    with pytest.raises(DimensionMismatch):
        apply_standardizer(np.ones((2, 3)), fit_standardizer(np.random.default_rng(0).random((3, 2))))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31), st.integers(3, 50))
def test_standardizer_idempotent(seed, n):
    rng = np.random.default_rng(seed)
    X = rng.normal(rng.uniform(-10, 10, 5), rng.uniform(0.1, 10, 5), (n, 5))
    Z = apply_standardizer(X, fit_standardizer(X))
    assert np.abs(apply_standardizer(Z, fit_standardizer(Z)) - Z).max() < 1e-8


def test_pipeline_round_trip(tmp_path, small_dataset):
    pipe = FeaturePipeline().fit(small_dataset.normal, list(small_dataset))
    pipe.save(tmp_path / "p.json")
    again = FeaturePipeline.load(tmp_path / "p.json")
    trip = small_dataset.drowsy[0]
    np.testing.assert_array_equal(pipe.transform(trip).X, again.transform(trip).X)


def test_pipeline_without_normals():
    trip = make_trip(_rows(20), TripLabel.DROWSY)
    with pytest.raises(InsufficientData):
        FeaturePipeline().fit([], [trip])
    pipe = FeaturePipeline(FeatureConfig(include_anomaly=False)).fit([], [trip])
    assert pipe.transform(trip).X.shape == (19, 18)


def test_features_csv(tmp_path):
    tf = featurize(make_trip(_rows(4)), _identity_model())
    write_features_csv([tf], tmp_path / "f.csv")
    lines = (tmp_path / "f.csv").read_text().splitlines()
    assert lines[0].split(",")[:3] == ["trip_id", "t", "X-acceleration"]
    assert len(lines) == 4
    assert np.allclose([float(v) for v in lines[1].split(",")[2:]], tf.X[0])
