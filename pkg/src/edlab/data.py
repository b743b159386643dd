"""Hourly load series: CSV ingestion, lagged features, chronological splits, synthetic series.

CSV layout (one row per hour, ISO-8601 timestamps, local time)::

    timestamp,load_mw[,bus_0,bus_1,...]
    2012-01-01T00:00:00,812.5
    2012-01-01T01:00:00,790.1

Utility data such as the PJM hourly load archive is not redistributed;
export it to this layout (one zone or the RTO total as ``load_mw``).
"""
from __future__ import annotations

import csv
import datetime as dt
import math
from dataclasses import dataclass, field

import numpy as np

from . import dist as dist_mod
from .errors import (
    GapError,
    InsufficientData,
    InvalidParams,
    NegativeLoad,
    NonMonotoneTimestamps,
    ParseError,
)

N_LAGS = 24
HOUR = np.timedelta64(1, "h")


@dataclass(frozen=True, eq=False)
class LoadSeries:
    timestamps: np.ndarray  # datetime64[s]
    total_load: np.ndarray
    bus_loads: np.ndarray | None = None
    bus_names: tuple[str, ...] = ()

    def __post_init__(self):
        ts = np.asarray(self.timestamps, dtype="datetime64[s]")
        load = np.asarray(self.total_load, dtype=float)
        if ts.shape != load.shape or ts.ndim != 1:
            raise InvalidParams("timestamps and loads must be 1-D arrays of equal length")
        object.__setattr__(self, "timestamps", ts)
        object.__setattr__(self, "total_load", load)

    def __len__(self):
        return self.total_load.size

    @property
    def hours(self) -> np.ndarray:
        return ((self.timestamps - self.timestamps.astype("datetime64[D]")) // HOUR).astype(int)


def _parse_ts(text: str, line: int) -> np.datetime64:
    try:
        t = dt.datetime.fromisoformat(text.strip())
    except ValueError as exc:
        raise ParseError(line, f"bad timestamp {text!r}") from exc
    return np.datetime64(t.replace(tzinfo=None), "s")


def load_csv(path, allow_gaps: bool = False) -> LoadSeries:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ParseError(1, "empty file")
    header = [h.strip() for h in rows[0]]
    if header[:2] != ["timestamp", "load_mw"]:
        raise ParseError(1, "header must start with timestamp,load_mw")
    bus_names = tuple(header[2:])
    ts, load, buses = [], [], []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(header):
            raise ParseError(lineno, f"expected {len(header)} fields, got {len(row)}")
        t = _parse_ts(row[0], lineno)
        try:
            vals = [float(v) for v in row[1:]]
        except ValueError as exc:
            raise ParseError(lineno, f"non-numeric load: {exc}") from exc
        if any(v < 0 or not math.isfinite(v) for v in vals):
            raise NegativeLoad(f"line {lineno}: loads must be finite and non-negative")
        if ts:
            if t <= ts[-1]:
                raise NonMonotoneTimestamps(f"line {lineno}: {t} does not follow {ts[-1]}")
            if t - ts[-1] > HOUR and not allow_gaps:
                raise GapError(f"line {lineno}: gap before {t} (previous {ts[-1]})")
        ts.append(t)
        load.append(vals[0])
        buses.append(vals[1:])
    bus_loads = np.array(buses, dtype=float) if bus_names else None
    return LoadSeries(np.array(ts, dtype="datetime64[s]"), np.array(load), bus_loads, bus_names)


def write_csv(series: LoadSeries, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["timestamp", "load_mw", *series.bus_names])
        for i, t in enumerate(series.timestamps):
            row = [str(t), f"{series.total_load[i]:.12g}"]
            if series.bus_loads is not None:
                row += [f"{v:.12g}" for v in series.bus_loads[i]]
            w.writerow(row)


# -- samples ------------------------------------------------------------------

@dataclass(frozen=True)
class SplitSpec:
    train_days: int
    val_days: int
    test_days: int

    def __post_init__(self):
        if min(self.train_days, self.val_days, self.test_days) < 0 or self.train_days == 0:
            raise InvalidParams("split needs train_days > 0 and non-negative val/test days")


@dataclass(frozen=True, eq=False)
class SampleSet:
    X: np.ndarray  # (n, 25): 24 lagged loads (oldest first) and a weekday flag
    y: np.ndarray
    timestamps: np.ndarray
    feature_times: np.ndarray = field(repr=False)  # timestamp of the newest lag

    def __len__(self):
        return self.y.size

    @property
    def hours(self) -> np.ndarray:
        return ((self.timestamps - self.timestamps.astype("datetime64[D]")) // HOUR).astype(int)

    def subset(self, sel) -> "SampleSet":
        return SampleSet(self.X[sel], self.y[sel], self.timestamps[sel], self.feature_times[sel])


def weekday_flag(ts: np.ndarray) -> np.ndarray:
    # 1970-01-01 was a Thursday
    dow = (ts.astype("datetime64[D]").astype(np.int64) + 3) % 7
    return (dow < 5).astype(float)


def make_samples(series: LoadSeries, split: SplitSpec) -> tuple[SampleSet, SampleSet, SampleSet]:
    """Lag-24 samples assigned to train/val/test by the calendar day of the target."""
    n = len(series)
    if n < N_LAGS + 1:
        raise InsufficientData(f"need at least {N_LAGS + 1} hours, got {n}")
    days = series.timestamps.astype("datetime64[D]")
    day_idx = (days - days[0]).astype(np.int64)
    total_days = split.train_days + split.val_days + split.test_days
    if day_idx[-1] + 1 < total_days:
        raise InsufficientData(f"series covers {day_idx[-1] + 1} days, split needs {total_days}")

    t = np.arange(N_LAGS, n)
    contiguous = series.timestamps[t] - series.timestamps[t - N_LAGS] == N_LAGS * HOUR
    t = t[contiguous]
    lags = np.lib.stride_tricks.sliding_window_view(series.total_load, N_LAGS)[t - N_LAGS]
    X = np.column_stack([lags, weekday_flag(series.timestamps[t])])
    full = SampleSet(X, series.total_load[t].copy(), series.timestamps[t], series.timestamps[t - 1])
    d = day_idx[t]
    edges = np.cumsum([split.train_days, split.val_days, split.test_days])
    return (
        full.subset(d < edges[0]),
        full.subset((d >= edges[0]) & (d < edges[1])),
        full.subset((d >= edges[1]) & (d < edges[2])),
    )


@dataclass(frozen=True, eq=False)
class Normalizer:
    mean: np.ndarray
    scale: np.ndarray

    @classmethod
    def fit(cls, X) -> "Normalizer":
        X = np.asarray(X, dtype=float)
        mean = X.mean(axis=0)
        scale = X.std(axis=0)
        scale = np.where(scale > 0, scale, 1.0)
        return cls(mean, scale)

    def __call__(self, X) -> np.ndarray:
        return (np.asarray(X, dtype=float) - self.mean) / self.scale


# -- synthetic series ------------------------------------------------------------

@dataclass(frozen=True)
class SynthSpec:
    """Demand = level(t) + scale(t) * (X - E[X]) with X drawn i.i.d. from ``family``.

    ``level(t) = level * (1 + amplitude * cos(2 pi (hour - peak_hour) / 24))``
    (times ``weekend_factor`` on weekends) and ``scale(t) = (level(t) / level) ** hetero``.
    With no diurnal options the draws are returned as they are.
    """

    family: dict
    hours: int
    seed: int = 0
    start: str = "2012-01-01T00:00:00"
    level: float | None = None
    amplitude: float = 0.0
    peak_hour: float = 18.0
    hetero: float = 0.0
    weekend_factor: float = 1.0

    @classmethod
    def from_dict(cls, doc: dict) -> "SynthSpec":
        doc = dict(doc)
        diurnal = doc.pop("diurnal", {}) or {}
        return cls(**doc, **diurnal)

    def to_dict(self) -> dict:
        return {
            "family": dict(self.family), "hours": self.hours, "seed": self.seed, "start": self.start,
            "diurnal": {
                "level": self.level, "amplitude": self.amplitude, "peak_hour": self.peak_hour,
                "hetero": self.hetero, "weekend_factor": self.weekend_factor,
            },
        }


def synth(spec: SynthSpec) -> LoadSeries:
    if spec.hours <= 0:
        raise InvalidParams("hours must be positive")
    if not 0 <= spec.amplitude < 1:
        raise InvalidParams("diurnal amplitude must lie in [0, 1)")
    noise = dist_mod.from_spec(spec.family)
    rng = np.random.default_rng(spec.seed)
    x = np.asarray(noise.sample(rng, spec.hours), dtype=float)
    ts = np.datetime64(spec.start, "s") + np.arange(spec.hours) * HOUR
    plain = spec.level is None and spec.amplitude == 0 and spec.hetero == 0 and spec.weekend_factor == 1
    if plain:
        load = x
    else:
        level = noise.mean() if spec.level is None else spec.level
        hour = ((ts - ts.astype("datetime64[D]")) // HOUR).astype(float)
        shape = 1.0 + spec.amplitude * np.cos(2 * np.pi * (hour - spec.peak_hour) / 24.0)
        shape = shape * np.where(weekday_flag(ts) > 0, 1.0, spec.weekend_factor)
        scale = shape ** spec.hetero
        load = np.maximum(level * shape + scale * (x - noise.mean()), 0.0)
    if np.any(load < 0):
        raise InvalidParams("family produced negative loads; shift its support")
    return LoadSeries(ts, load)
