"""EffQR - Nearly efficient one-step estimation for multi-level linear quantile regression."""

__version__ = "0.1.0"

from .core import CoefficientSet, Dataset, FitConfig, QuantileGrid, make_dataset, make_grid
from .estimator import BootstrapResult, EstimateReport, bootstrap_se, estimate
from .pinball import PinballFit, fit_grid, fit_quantile, pinball_loss
from .sim import MODELS, generate, get_model, run_monte_carlo

__all__ = [
    "BootstrapResult",
    "CoefficientSet",
    "Dataset",
    "EstimateReport",
    "FitConfig",
    "MODELS",
    "PinballFit",
    "QuantileGrid",
    "bootstrap_se",
    "estimate",
    "fit_grid",
    "fit_quantile",
    "generate",
    "get_model",
    "make_dataset",
    "make_grid",
    "pinball_loss",
    "run_monte_carlo",
]
