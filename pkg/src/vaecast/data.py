"""Series ingestion, cleaning, resampling, windowing, splits, and the chaotic
delay-equation generator used as the synthetic benchmark.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np


class DataError(ValueError):
    """Raised for unusable input data (parse failures, bad lengths, ...)."""


@dataclass
class TimeSeries:
    """Univariate series; missing observations are stored as NaN."""

    values: np.ndarray
    timestamps: list[str] | None = None
    name: str = ""
    frequency: str = ""

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 1:
            raise DataError(f"series values must be 1-D, got shape {self.values.shape}")
        if self.timestamps is not None and len(self.timestamps) != len(self.values):
            raise DataError("timestamps and values lengths differ")

    def __len__(self) -> int:
        return len(self.values)

    @property
    def missing_mask(self) -> np.ndarray:
        return np.isnan(self.values)

    def has_missing(self) -> bool:
        return bool(self.missing_mask.any())


def load_csv(path) -> TimeSeries:
    """Read a series from CSV: either a single value column or
    (timestamp, value) columns, with an optional header row. Empty value
    cells are kept as missing.
    """
    rows: list[list[str]] = []
    with open(path, newline="", encoding="utf-8-sig") as fh:
        for line_no, row in enumerate(csv.reader(fh), start=1):
            if not row or all(not cell.strip() for cell in row):
                continue
            rows.append([line_no, *[cell.strip() for cell in row]])
    if not rows:
        raise DataError(f"{path}: empty file")

    width = len(rows[0]) - 1
    if width not in (1, 2):
        raise DataError(f"{path}: line {rows[0][0]}: expected 1 or 2 columns, got {width}")

    def parse_value(cell: str, line_no: int) -> float:
        if cell == "":
            return math.nan
        try:
            return float(cell)
        except ValueError:
            raise DataError(f"{path}: line {line_no}: non-numeric value {cell!r}") from None

    name = ""
    start = 0
    first_value_cell = rows[0][-1]
    if first_value_cell != "":
        try:
            float(first_value_cell)
        except ValueError:
            name = first_value_cell
            start = 1

    values: list[float] = []
    timestamps: list[str] | None = [] if width == 2 else None
    for entry in rows[start:]:
        line_no, cells = entry[0], entry[1:]
        if len(cells) != width:
            raise DataError(f"{path}: line {line_no}: expected {width} columns, "
                            f"got {len(cells)}")
        values.append(parse_value(cells[-1], line_no))
        if timestamps is not None:
            timestamps.append(cells[0])
    if not values:
        raise DataError(f"{path}: no data rows")
    return TimeSeries(np.array(values), timestamps=timestamps, name=name)


def write_csv(series: TimeSeries, path) -> None:
    """Write a series back out in the schema load_csv reads; floats round-trip."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        if series.timestamps is not None:
            for ts, v in zip(series.timestamps, series.values):
                writer.writerow([ts, "" if math.isnan(v) else repr(float(v))])
        else:
            for v in series.values:
                writer.writerow(["" if math.isnan(v) else repr(float(v))])


def impute_adjacent_mean(series: TimeSeries) -> TimeSeries:
    """Fill each missing run with the mean of its nearest present neighbors.

    Leading/trailing missing runs take the nearest present value. Idempotent.
    """
    values = series.values.copy()
    present = np.flatnonzero(~np.isnan(values))
    if present.size == 0:
        raise DataError("cannot impute an all-missing series")
    values[:present[0]] = values[present[0]]
    values[present[-1] + 1:] = values[present[-1]]
    for left, right in zip(present[:-1], present[1:]):
        if right - left > 1:
            values[left + 1:right] = 0.5 * (values[left] + values[right])
    return TimeSeries(values, timestamps=series.timestamps, name=series.name,
                      frequency=series.frequency)


def impute_locf(series: TimeSeries) -> TimeSeries:
    """Last observation carried forward; the first value must be present."""
    values = series.values.copy()
    if len(values) == 0:
        raise DataError("cannot impute an empty series")
    if math.isnan(values[0]):
        raise DataError("LOCF requires the first value to be present")
    for i in range(1, len(values)):
        if math.isnan(values[i]):
            values[i] = values[i - 1]
    return TimeSeries(values, timestamps=series.timestamps, name=series.name,
                      frequency=series.frequency)


def aggregate_resample(series: TimeSeries, factor: int, method: str = "mean"
                       ) -> TimeSeries:
    """Average non-overlapping blocks of ``factor`` points; the trailing
    partial block is dropped."""
    if factor < 1:
        raise DataError(f"resample factor must be >= 1, got {factor}")
    if method != "mean":
        raise DataError(f"unsupported resample method {method!r}")
    if factor == 1:
        return TimeSeries(series.values.copy(), timestamps=series.timestamps,
                          name=series.name, frequency=series.frequency)
    blocks = len(series.values) // factor
    trimmed = series.values[:blocks * factor].reshape(blocks, factor)
    values = trimmed.mean(axis=1)
    timestamps = None
    if series.timestamps is not None:
        timestamps = [series.timestamps[i * factor] for i in range(blocks)]
    return TimeSeries(values, timestamps=timestamps, name=series.name,
                      frequency=series.frequency)


# ---------------------------------------------------------------------------
# normalization, windowing, splits


@dataclass(frozen=True)
class NormalizationStats:
    """Z-score statistics computed on the training region only."""

    mean: float
    std: float

    @classmethod
    def from_values(cls, values: np.ndarray) -> "NormalizationStats":
        std = float(values.std())
        return cls(mean=float(values.mean()), std=std if std > 0.0 else 1.0)

    def normalize(self, x: np.ndarray) -> np.ndarray:
        return (np.asarray(x, dtype=np.float64) - self.mean) / self.std

    def denormalize(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(x, dtype=np.float64) * self.std + self.mean


@dataclass
class WindowedDataset:
    """Stride-1 (history, next value) pairs, already normalized."""

    histories: np.ndarray  # [n, history_size]
    targets: np.ndarray    # [n]

    def __post_init__(self):
        if self.histories.shape[0] != self.targets.shape[0]:
            raise DataError("histories and targets row counts differ")

    def __len__(self) -> int:
        return len(self.targets)


@dataclass(frozen=True)
class TestWindow:
    """A horizon-length evaluation block in original units."""

    history: np.ndarray  # [history_size], raw values preceding the block
    future: np.ndarray   # [horizon], raw truth
    origin: int          # index of the first future point in the source series


@dataclass
class SplitDataset:
    history_size: int
    horizon: int
    train: WindowedDataset
    validation: WindowedDataset
    test_windows: list[TestWindow]
    stats: NormalizationStats
    train_values: np.ndarray  # raw training region (climatology baselines)


def _window_region(values: np.ndarray, history_size: int, first_target: int,
                   last_target: int, stats: NormalizationStats) -> WindowedDataset:
    idx = np.arange(first_target, last_target)
    histories = np.stack([values[i - history_size:i] for i in idx]) if idx.size \
        else np.zeros((0, history_size))
    targets = values[idx] if idx.size else np.zeros(0)
    return WindowedDataset(histories=stats.normalize(histories),
                           targets=stats.normalize(targets))


def split_and_window(series: TimeSeries | np.ndarray, history_size: int,
                     horizon: int) -> SplitDataset:
    """Tail split: last 5 horizons are the test region, the immediately
    preceding horizon provides validation targets, the rest is training.
    Normalization statistics come from the training region alone.
    """
    values = series.values if isinstance(series, TimeSeries) else \
        np.asarray(series, dtype=np.float64)
    if np.isnan(values).any():
        raise DataError("series contains missing values; impute before windowing")
    minimum = history_size + 6 * horizon + 1
    if len(values) < minimum:
        raise DataError(f"series too short: need at least {minimum} points "
                        f"(history {history_size} + 6 x horizon {horizon} + 1), "
                        f"got {len(values)}")
    total = len(values)
    train_end = total - 6 * horizon
    stats = NormalizationStats.from_values(values[:train_end])

    train = _window_region(values, history_size, history_size, train_end, stats)
    validation = _window_region(values, history_size, train_end,
                                train_end + horizon, stats)
    test_windows = []
    for w in range(5):
        start = train_end + horizon + w * horizon
        test_windows.append(TestWindow(history=values[start - history_size:start].copy(),
                                       future=values[start:start + horizon].copy(),
                                       origin=start))
    return SplitDataset(history_size=history_size, horizon=horizon, train=train,
                        validation=validation, test_windows=test_windows,
                        stats=stats, train_values=values[:train_end].copy())


# ---------------------------------------------------------------------------
# synthetic benchmark series


def mackey_glass(length: int, a: float = 0.1, b: float = 0.2, tau: float = 17.0,
                 dt: float = 0.1, burn_in: int = 1000, x_init: float = 1.2
                 ) -> TimeSeries:
    """Chaotic delay-differential benchmark series.

    Integrates dx/dt = b * x(t - tau) / (1 + x(t - tau)^10) - a * x(t), where
    ``a`` is the linear damping rate and ``b`` the delayed feedback gain, with
    fourth-order Runge-Kutta, linear interpolation of the delayed term, and a
    constant history x_init for t <= 0. ``burn_in`` integration steps are
    discarded, then one sample is emitted per unit time (every 1/dt steps).
    """
    if length < 1:
        raise DataError("length must be >= 1")
    if dt <= 0:
        raise DataError("dt must be positive")
    if tau < dt:
        raise DataError("the delay must be at least one integration step (tau >= dt)")
    per_sample = int(round(1.0 / dt))
    if per_sample < 1:
        raise DataError("dt must be <= 1 so at least one step fits per sample")

    delay_steps = tau / dt
    offset = int(math.ceil(delay_steps)) + 2
    total_steps = burn_in + (length - 1) * per_sample
    buf = np.empty(offset + total_steps + 1)
    buf[:offset + 1] = x_init

    def delayed(pos: float) -> float:
        # pos indexes the buffer in step units; clamp into the constant history
        if pos <= 0.0:
            return x_init
        i0 = int(math.floor(pos))
        frac = pos - i0
        if frac == 0.0:
            return buf[i0]
        return buf[i0] * (1.0 - frac) + buf[i0 + 1] * frac

    def deriv(x: float, x_tau: float) -> float:
        return b * x_tau / (1.0 + x_tau ** 10) - a * x

    for i in range(offset, offset + total_steps):
        x = buf[i]
        d0 = delayed(i - delay_steps)
        d_half = delayed(i + 0.5 - delay_steps)
        d1 = delayed(i + 1.0 - delay_steps)
        k1 = deriv(x, d0)
        k2 = deriv(x + 0.5 * dt * k1, d_half)
        k3 = deriv(x + 0.5 * dt * k2, d_half)
        k4 = deriv(x + dt * k3, d1)
        buf[i + 1] = x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)

    samples = buf[offset + burn_in: offset + total_steps + 1: per_sample][:length]
    return TimeSeries(samples.copy(), name="mackey-glass", frequency="unit-time")
