"""Probabilistic univariate time-series forecasting with a CVAE trained on CRPS."""

__version__ = "0.1.0"

from .data import TimeSeries, load_csv, mackey_glass, split_and_window  # noqa: F401
from .forecasting import ForecastPaths, forecast_paths, summarize_quantiles  # noqa: F401
from .metrics import crps_quantiles, crps_samples, evaluate_windows  # noqa: F401
from .model import CvaeForecaster, ModelConfig, training_objective  # noqa: F401
from .tensor import RngStream, Tape, Tensor  # noqa: F401
from .training import Checkpoint, TrainConfig, load_checkpoint, save_checkpoint, train  # noqa: F401
