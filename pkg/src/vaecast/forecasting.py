"""Autoregressive multistep sampling from a trained model.

Each forecast path draws its latent codes from the prior, decodes one step,
feeds the sampled value back into the history window, and repeats. Path j
consumes its own random substream derived from (seed, j), so paths are
reproducible individually and a run truncated to a shorter horizon matches
the prefix of a longer one.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .tensor import RngStream, ShapeError, Tensor
from .training import Checkpoint

ForecastFn = Callable[[np.ndarray, int, int, int], np.ndarray]
"""(history_raw, horizon, num_paths, seed) -> paths [num_paths, horizon]."""


@dataclass
class ForecastPaths:
    paths: np.ndarray  # [num_paths, horizon], original data units
    origin: int
    horizon: int
    seed: int
    model_id: str

    def __post_init__(self):
        self.paths = np.asarray(self.paths, dtype=np.float64)
        if self.paths.ndim != 2 or self.paths.shape[0] < 1 or self.paths.shape[1] < 1:
            raise ShapeError(f"paths must be [N >= 1, h >= 1], got {self.paths.shape}")
        if self.paths.shape[1] != self.horizon:
            raise ShapeError("horizon does not match the path matrix width")
        if not np.isfinite(self.paths).all():
            raise ValueError("forecast paths contain non-finite values")

    @property
    def num_paths(self) -> int:
        return self.paths.shape[0]


def sample_one_step(checkpoint: Checkpoint, history_normalized, rng: RngStream,
                    model=None) -> float:
    """One draw from the one-step predictive distribution (normalized units).

    z comes from the standard normal prior; passing an all-zero z instead
    (via decode) gives the deterministic point-forecast mode.
    """
    model = checkpoint.to_model() if model is None else model
    hist = np.asarray(history_normalized.values if isinstance(history_normalized, Tensor)
                      else history_normalized, dtype=np.float64)
    if hist.shape != (model.config.history_size,):
        raise ShapeError(f"history must have length {model.config.history_size}, "
                         f"got shape {hist.shape}")
    cond = model.condition_batch(Tensor(hist[None, :]))
    z = Tensor(rng.normal((1, model.config.latent_size)))
    return float(model.decode_from(cond, z).values[0])


def forecast_paths(checkpoint: Checkpoint, history_raw: Sequence[float], h: int,
                   num_paths: int, seed: int, origin: int = -1) -> ForecastPaths:
    """Sample num_paths autoregressive trajectories of length h.

    The history is normalized with the checkpoint statistics, each step feeds
    the sampled value (not a mean) back into the window, and outputs are
    mapped back to original units.
    """
    if h < 1 or num_paths < 1:
        raise ValueError("h and num_paths must be >= 1")
    model = checkpoint.to_model()
    hws = model.config.history_size
    history_raw = np.asarray(history_raw, dtype=np.float64)
    if history_raw.shape != (hws,):
        raise ShapeError(f"history must have length {hws}, got {history_raw.shape}")
    stats = checkpoint.stats
    latent = model.config.latent_size

    streams = [RngStream(seed, stream=j) for j in range(num_paths)]
    windows = np.repeat(stats.normalize(history_raw)[None, :], num_paths, axis=0)
    out = np.empty((num_paths, h))
    for step in range(h):
        cond = model.condition_batch(Tensor(windows))
        z = Tensor(np.stack([s.normal((latent,)) for s in streams]))
        forecasts = model.decode_from(cond, z).values
        out[:, step] = forecasts
        windows = np.concatenate([windows[:, 1:], forecasts[:, None]], axis=1)
    return ForecastPaths(paths=stats.denormalize(out), origin=origin, horizon=h,
                         seed=seed, model_id=checkpoint.model_id)


def summarize_quantiles(paths: ForecastPaths | np.ndarray,
                        levels: Sequence[float]) -> np.ndarray:
    """Per-step empirical quantiles (linear interpolation of order statistics).

    Returns an array [horizon, len(levels)], non-decreasing along the level
    axis at every step.
    """
    mat = paths.paths if isinstance(paths, ForecastPaths) else np.asarray(paths)
    levels = np.asarray(list(levels), dtype=np.float64)
    if levels.size == 0:
        raise ValueError("levels must be non-empty")
    if levels.min() <= 0.0 or levels.max() >= 1.0:
        raise ValueError("levels must lie strictly inside (0, 1)")
    if np.any(np.diff(levels) < 0):
        raise ValueError("levels must be sorted ascending")
    return np.quantile(mat, levels, axis=0, method="linear").T


def write_forecast_csv(paths: ForecastPaths, csv_path) -> Path:
    """Write one row per path plus a JSON sidecar with the run metadata."""
    csv_path = Path(csv_path)
    lines = [",".join(repr(float(v)) for v in row) for row in paths.paths]
    csv_path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    sidecar = csv_path.with_suffix(".json")
    sidecar.write_text(json.dumps({"origin": paths.origin,
                                   "horizon": paths.horizon,
                                   "num_paths": paths.num_paths,
                                   "seed": paths.seed,
                                   "model_id": paths.model_id},
                                  indent=2) + "\n", encoding="utf-8")
    return sidecar


# ---------------------------------------------------------------------------
# reference forecasters


def checkpoint_forecaster(checkpoint: Checkpoint) -> ForecastFn:
    def fn(history: np.ndarray, h: int, num_paths: int, seed: int) -> np.ndarray:
        return forecast_paths(checkpoint, history, h, num_paths, seed).paths
    return fn


def climatology_forecaster(train_values: np.ndarray) -> ForecastFn:
    """Paths are bootstrap resamples of the training marginal distribution."""
    train_values = np.asarray(train_values, dtype=np.float64)
    if train_values.size == 0:
        raise ValueError("climatology needs a non-empty training region")

    def fn(history: np.ndarray, h: int, num_paths: int, seed: int) -> np.ndarray:
        rng = RngStream(seed, stream=0)
        idx = rng.integers(0, train_values.size, (num_paths, h))
        return train_values[idx]
    return fn


def persistence_forecaster() -> ForecastFn:
    """Every path repeats the last observed value (degenerate distribution)."""

    def fn(history: np.ndarray, h: int, num_paths: int, seed: int) -> np.ndarray:
        last = float(np.asarray(history)[-1])
        return np.full((num_paths, h), last)
    return fn


def oracle_forecaster(series_values: np.ndarray) -> ForecastFn:
    """Test hook: paths replicate the true future (requires window origins)."""
    series_values = np.asarray(series_values, dtype=np.float64)

    def fn(history: np.ndarray, h: int, num_paths: int, seed: int) -> np.ndarray:
        hist = np.asarray(history, dtype=np.float64)
        # locate the window by matching its history slice
        for start in range(len(series_values) - len(hist) - h + 1):
            if np.array_equal(series_values[start:start + len(hist)], hist):
                future = series_values[start + len(hist):start + len(hist) + h]
                return np.repeat(future[None, :], num_paths, axis=0)
        raise ValueError("history not found in the reference series")
    return fn
