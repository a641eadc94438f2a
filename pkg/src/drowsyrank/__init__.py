"""Weakly supervised driver-drowsiness scoring from trip-labelled telemetry."""

from drowsyrank.data import Dataset, SensorFrame, Trip, TripLabel
from drowsyrank.ranker import LinearModel, TrainConfig, train

__all__ = [
    "Dataset",
    "LinearModel",
    "SensorFrame",
    "TrainConfig",
    "Trip",
    "TripLabel",
    "train",
]

__version__ = "0.1.0"
