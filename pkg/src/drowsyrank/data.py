"""Trips, trip CSV files and manifests.

A trip file holds one trip sampled at (nominally) 1 Hz::

    t,ax,ay,az,speed,direction[,truth]

``ax``/``ay``/``az`` are longitudinal, lateral and vertical acceleration in
m/s^2, ``speed`` is in m/s and ``direction`` is the heading in degrees.  The
optional ``truth`` column carries per-frame 0/1 drowsiness and is only present
on synthetic data.

A manifest lists one trip per line as ``<relative-path>,<drowsy|normal>``;
lines starting with ``#`` are ignored.
"""

from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from drowsyrank.errors import (
    DuplicateTripId,
    EmptyTrip,
    MalformedRow,
    MissingFile,
    NonMonotoneTime,
    UnknownLabelToken,
)

COLUMNS = ("t", "ax", "ay", "az", "speed", "direction")
TRUTH_COLUMN = "truth"


class TripLabel(enum.Enum):
    DROWSY = "drowsy"
    NORMAL = "normal"

    @classmethod
    def parse(cls, token: str) -> "TripLabel":
        try:
            return cls(token.strip().lower())
        except ValueError:
            raise UnknownLabelToken(f"unknown trip label {token!r}; expected 'drowsy' or 'normal'") from None


@dataclass(frozen=True)
class SensorFrame:
    t: float
    ax: float
    ay: float
    az: float
    speed: float
    direction: float

    def as_tuple(self) -> tuple[float, ...]:
        return (self.t, self.ax, self.ay, self.az, self.speed, self.direction)


@dataclass(frozen=True)
class Violation:
    frame: int | None
    rule: str

    def __str__(self) -> str:
        where = "trip" if self.frame is None else f"frame {self.frame}"
        return f"{where}: {self.rule}"


@dataclass(eq=False)
class Trip:
    """One trip with a weak (trip-level) label.

    ``values`` is a ``(T, 6)`` float array with columns :data:`COLUMNS`.
    """

    id: str
    label: TripLabel
    values: np.ndarray
    truth: np.ndarray | None = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float).reshape(-1, len(COLUMNS))
        if self.truth is not None:
            self.truth = np.asarray(self.truth, dtype=np.int8)

    @classmethod
    def from_frames(cls, trip_id: str, label: TripLabel, frames: Sequence[SensorFrame],
                    truth: Sequence[int] | None = None) -> "Trip":
        values = np.array([f.as_tuple() for f in frames], dtype=float).reshape(-1, len(COLUMNS))
        return cls(trip_id, label, values, None if truth is None else np.asarray(truth))

    def __len__(self) -> int:
        return self.values.shape[0]

    @property
    def t(self) -> np.ndarray:
        return self.values[:, 0]

    @property
    def frames(self) -> list[SensorFrame]:
        return [SensorFrame(*map(float, row)) for row in self.values]

    @property
    def is_drowsy(self) -> bool:
        return self.label is TripLabel.DROWSY


@dataclass
class Dataset:
    trips: list[Trip] = field(default_factory=list)

    def __post_init__(self):
        seen = set()
        for trip in self.trips:
            if trip.id in seen:
                raise DuplicateTripId(f"duplicate trip id {trip.id!r}")
            seen.add(trip.id)

    def __iter__(self) -> Iterator[Trip]:
        return iter(self.trips)

    def __len__(self) -> int:
        return len(self.trips)

    @property
    def n_drowsy(self) -> int:
        return sum(trip.is_drowsy for trip in self.trips)

    @property
    def n_normal(self) -> int:
        return len(self.trips) - self.n_drowsy

    @property
    def drowsy(self) -> list[Trip]:
        return [trip for trip in self.trips if trip.is_drowsy]

    @property
    def normal(self) -> list[Trip]:
        return [trip for trip in self.trips if not trip.is_drowsy]

    @property
    def has_truth(self) -> bool:
        return bool(self.trips) and all(trip.truth is not None for trip in self.trips)

    def by_id(self, trip_id: str) -> Trip:
        for trip in self.trips:
            if trip.id == trip_id:
                return trip
        raise KeyError(trip_id)

    def subset(self, ids: Sequence[str]) -> "Dataset":
        index = {trip.id: trip for trip in self.trips}
        return Dataset([index[i] for i in ids])


def validate_trip(trip: Trip) -> list[Violation]:
    """Check the trip invariants; returns an empty list when all hold."""
    out: list[Violation] = []
    values = trip.values
    if len(values) == 0:
        return [Violation(None, "frames non-empty")]
    finite = np.isfinite(values).all(axis=1)
    for k in np.flatnonzero(~finite):
        out.append(Violation(int(k), "all values finite"))
    dt = np.diff(values[:, 0])
    for k in np.flatnonzero(~(dt > 0)):
        out.append(Violation(int(k) + 1, "timestamps strictly increasing"))
    for k in np.flatnonzero(values[:, 4] < 0):
        out.append(Violation(int(k), "speed >= 0"))
    direction = values[:, 5]
    for k in np.flatnonzero((direction < 0) | (direction >= 360)):
        out.append(Violation(int(k), "direction in [0, 360)"))
    if trip.truth is not None:
        if len(trip.truth) != len(values):
            out.append(Violation(None, "truth has one entry per frame"))
        else:
            for k in np.flatnonzero((trip.truth != 0) & (trip.truth != 1)):
                out.append(Violation(int(k), "truth in {0, 1}"))
    return out


def parse_trip_csv(path: str | Path, label: TripLabel, trip_id: str | None = None) -> Trip:
    path = Path(path)
    if not path.is_file():
        raise MissingFile(f"trip file not found: {path}")
    rows: list[list[float]] = []
    truth: list[int] = []
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise EmptyTrip(f"{path}: empty file")
        header = [h.strip() for h in header]
        if header == list(COLUMNS):
            has_truth = False
        elif header == list(COLUMNS) + [TRUTH_COLUMN]:
            has_truth = True
        else:
            raise MalformedRow(f"{path}:1: header must be {','.join(COLUMNS)}[,{TRUTH_COLUMN}], got {','.join(header)}")
        width = len(header)
        prev_t = -math.inf
        for record in reader:
            line = reader.line_num
            if not record or (len(record) == 1 and not record[0].strip()):
                continue
            if len(record) != width:
                raise MalformedRow(f"{path}:{line}: expected {width} columns, got {len(record)}")
            try:
                nums = [float(v) for v in record[:6]]
            except ValueError:
                raise MalformedRow(f"{path}:{line}: non-numeric value in {record!r}") from None
            if not all(math.isfinite(v) for v in nums):
                raise MalformedRow(f"{path}:{line}: non-finite value in {record!r}")
            if nums[0] <= prev_t:
                raise NonMonotoneTime(f"{path}:{line}: timestamp {nums[0]!r} does not exceed previous {prev_t!r}",
                                      line=line)
            prev_t = nums[0]
            if has_truth:
                token = record[6].strip()
                if token not in ("0", "1"):
                    raise MalformedRow(f"{path}:{line}: truth must be 0 or 1, got {token!r}")
                truth.append(int(token))
            rows.append(nums)
    if not rows:
        raise EmptyTrip(f"{path}: no data rows")
    return Trip(trip_id or path.stem, label, np.array(rows), np.array(truth) if has_truth else None)


def _fmt(x: float) -> str:
    return repr(float(x))


def write_trip_csv(trip: Trip, path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = list(COLUMNS) + ([TRUTH_COLUMN] if trip.truth is not None else [])
    lines = [",".join(header)]
    for k, row in enumerate(trip.values):
        cells = [_fmt(v) for v in row]
        if trip.truth is not None:
            cells.append(str(int(trip.truth[k])))
        lines.append(",".join(cells))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def parse_manifest(path: str | Path) -> Dataset:
    path = Path(path)
    if not path.is_file():
        raise MissingFile(f"manifest not found: {path}")
    trips: list[Trip] = []
    seen: set[str] = set()
    for lineno, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = [p.strip() for p in line.rsplit(",", 1)]
        if len(parts) != 2:
            raise MalformedRow(f"{path}:{lineno}: expected '<path>,<label>'")
        rel, token = parts
        label = TripLabel.parse(token)
        trip_path = (path.parent / rel)
        if not trip_path.is_file():
            raise MissingFile(f"{path}:{lineno}: trip file not found: {trip_path}")
        trip = parse_trip_csv(trip_path, label)
        if trip.id in seen:
            raise DuplicateTripId(f"{path}:{lineno}: duplicate trip id {trip.id!r}")
        seen.add(trip.id)
        trips.append(trip)
    return Dataset(trips)


def write_manifest(entries: Sequence[tuple[str, TripLabel]], path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    body = "".join(f"{rel},{label.value}\n" for rel, label in entries)
    path.write_text(body, encoding="utf-8")
