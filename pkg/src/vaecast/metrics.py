"""Scoring: sample-based CRPS (exact energy form), quantile/pinball CRPS,
horizon evaluation over tail windows, relative scores, and run dispersion.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .forecasting import ForecastFn

QUANTILE_LEVELS_99 = np.arange(1, 100) / 100.0


@dataclass(frozen=True)
class EmpiricalDistribution:
    """Sorted sample values standing in for a predictive CDF."""

    values: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.values, dtype=np.float64)
        if arr.ndim != 1 or arr.size < 1:
            raise ValueError("an empirical distribution needs at least one sample")
        if not np.isfinite(arr).all():
            raise ValueError("samples must be finite")
        if np.any(np.diff(arr) < 0):
            arr = np.sort(arr)
        object.__setattr__(self, "values", arr)

    @property
    def n(self) -> int:
        return self.values.size


def crps_samples(dist: EmpiricalDistribution | np.ndarray | Sequence[float],
                 obs: float) -> float:
    """Exact CRPS of the empirical CDF against a scalar observation.

    Energy form mean|x - y| - (1/(2 n^2)) sum_ij |x_i - x_j|, with the double
    sum collapsed to sum_i (2i - n - 1) x_(i) over the sorted samples, so the
    whole thing is O(n log n).
    """
    xs = dist.values if isinstance(dist, EmpiricalDistribution) else \
        np.sort(np.asarray(dist, dtype=np.float64))
    n = xs.size
    if n < 1:
        raise ValueError("crps_samples requires at least one sample")
    term1 = float(np.abs(xs - obs).mean())
    coef = 2.0 * np.arange(1, n + 1) - n - 1.0
    spread = float(coef @ xs) / (n * n)
    return term1 - spread


def pinball_loss(q: float, obs: float, alpha: float) -> float:
    """Quantile loss: alpha * (obs - q) if obs >= q else (1 - alpha) * (q - obs)."""
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    if obs >= q:
        return alpha * (obs - q)
    return (1.0 - alpha) * (q - obs)


def crps_quantiles(quantile_values: Sequence[float], obs: float) -> float:
    """CRPS from the 99 centile predictions q_i at levels i/100:
    (1/100) sum_i 2 * pinball(q_i, obs, i/100)."""
    qs = np.asarray(quantile_values, dtype=np.float64)
    if qs.shape != (99,):
        raise ValueError(f"expected 99 quantile values, got shape {qs.shape}")
    if np.any(np.diff(qs) < 0):
        raise ValueError("quantile values must be non-decreasing")
    total = 0.0
    for level, q in zip(QUANTILE_LEVELS_99, qs):
        total += 2.0 * pinball_loss(float(q), obs, float(level))
    return total / 100.0


def relative_delta(crps: float, crps_best: float) -> float:
    """Percent deviation from the best model's score."""
    if crps_best <= 0.0:
        raise ValueError("reference score must be positive")
    return (crps - crps_best) / crps_best * 100.0


def delta_color(delta_percent: float) -> str:
    """Table color bands: green is the best model, then 10/50/100% thresholds."""
    if delta_percent <= 0.0:
        return "green"
    if delta_percent <= 10.0:
        return "blue"
    if delta_percent <= 50.0:
        return "black"
    if delta_percent <= 100.0:
        return "orange"
    return "red"


def coefficient_of_variation(values: Sequence[float]) -> float:
    """Population standard deviation over mean, as a percentage."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.size < 2:
        raise ValueError("coefficient of variation needs at least two values")
    mean = arr.mean()
    if mean == 0.0:
        raise ValueError("coefficient of variation undefined for zero mean")
    return float(arr.std() / mean * 100.0)


# ---------------------------------------------------------------------------
# window evaluation


@dataclass
class WindowEvaluation:
    """Scores for one model run over the tail test windows."""

    per_step: np.ndarray          # [num_windows, horizon]
    per_window: list[float]       # horizon-mean per window
    mean_crps: float


def evaluate_windows(forecast_fn: ForecastFn, series_values: np.ndarray,
                     history_size: int, horizon: int, num_windows: int = 5,
                     num_paths: int = 1000, seed: int = 0) -> WindowEvaluation:
    """Score a forecaster over consecutive non-overlapping tail windows.

    For each window: draw num_paths trajectories, CRPS per horizon step
    against the truth, average over steps; then average the window scores.
    Window w uses seed + w, so results are deterministic given the seed.
    """
    values = np.asarray(series_values, dtype=np.float64)
    need = history_size + num_windows * horizon
    if len(values) < need:
        raise ValueError(f"series too short for evaluation: need {need} points, "
                         f"got {len(values)}")
    test_start = len(values) - num_windows * horizon
    per_step = np.empty((num_windows, horizon))
    for w in range(num_windows):
        start = test_start + w * horizon
        history = values[start - history_size:start]
        truth = values[start:start + horizon]
        paths = np.asarray(forecast_fn(history, horizon, num_paths, seed + w))
        if paths.shape != (num_paths, horizon):
            raise ValueError(f"forecaster returned shape {paths.shape}, "
                             f"expected {(num_paths, horizon)}")
        cols = np.sort(paths, axis=0)
        coef = 2.0 * np.arange(1, num_paths + 1) - num_paths - 1.0
        spread = coef @ cols / (num_paths * num_paths)
        per_step[w] = np.abs(cols - truth[None, :]).mean(axis=0) - spread
    per_window = per_step.mean(axis=1)
    return WindowEvaluation(per_step=per_step,
                            per_window=[float(x) for x in per_window],
                            mean_crps=float(per_window.mean()))


# ---------------------------------------------------------------------------
# cross-run report


REPORT_SCHEMA = {
    "type": "object",
    "required": ["dataset", "model", "runs", "mean_crps", "cv_percent",
                 "per_window"],
    "properties": {
        "dataset": {"type": "string"},
        "model": {"type": "string"},
        "runs": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "required": ["mean_crps", "per_window"],
                "properties": {
                    "mean_crps": {"type": "number"},
                    "per_window": {"type": "array", "items": {"type": "number"}},
                },
            },
        },
        "mean_crps": {"type": "number"},
        "cv_percent": {"type": ["number", "null"]},
        "per_window": {"type": "array", "items": {"type": "number"}},
        "delta_percent": {"type": ["number", "null"]},
    },
}


@dataclass
class CrpsReport:
    dataset: str
    model: str
    run_scores: list[float]               # per-run mean CRPS
    per_window: list[float]               # mean across runs, per window
    mean_crps: float                      # mean over runs
    cv_percent: float | None              # None with a single run
    delta_percent: float | None = None
    run_details: list[WindowEvaluation] = field(default_factory=list)

    def to_json_dict(self) -> dict:
        return {
            "dataset": self.dataset,
            "model": self.model,
            "runs": [{"mean_crps": ev.mean_crps, "per_window": ev.per_window}
                     for ev in self.run_details],
            "mean_crps": self.mean_crps,
            "cv_percent": self.cv_percent,
            "per_window": self.per_window,
            "delta_percent": self.delta_percent,
        }


def build_report(dataset: str, model: str, runs: list[WindowEvaluation],
                 reference_crps: float | None = None) -> CrpsReport:
    if not runs:
        raise ValueError("a report needs at least one run")
    run_scores = [ev.mean_crps for ev in runs]
    per_window = np.mean([ev.per_window for ev in runs], axis=0)
    mean_crps = float(np.mean(run_scores))
    cv = coefficient_of_variation(run_scores) if len(run_scores) >= 2 else None
    delta = None
    if reference_crps is not None:
        delta = relative_delta(mean_crps, reference_crps)
    return CrpsReport(dataset=dataset, model=model, run_scores=run_scores,
                      per_window=[float(x) for x in per_window],
                      mean_crps=mean_crps, cv_percent=cv, delta_percent=delta,
                      run_details=runs)
