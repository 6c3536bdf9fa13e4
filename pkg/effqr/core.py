"""Domain types shared by every stage of the estimator."""

import os
from dataclasses import dataclass

import numpy as np

from .errors import DataError, DimensionError, GridError, NonFiniteError


def _frozen(array: np.ndarray) -> np.ndarray:
    array.flags.writeable = False
    return array


# =============================================================================
# Dataset
# =============================================================================


@dataclass(frozen=True, eq=False)
class Dataset:
    """Regression sample: n responses and an n x p design.

    An intercept is just a constant-1 column supplied by the caller.
    ``bound`` is max_i ||x_i||_inf, recorded for diagnostics only.
    """

    y: np.ndarray
    x: np.ndarray
    bound: float

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def p(self) -> int:
        return self.x.shape[1]

    def take(self, rows: np.ndarray) -> "Dataset":
        """Return the sub-sample (with repetition allowed) at ``rows``."""
        return make_dataset(self.y[rows], self.x[rows])


def make_dataset(y, x) -> Dataset:
    """
    Validate a response vector and design matrix.

    Args:
        y: Length-n responses
        x: n x p design (a 1-D array is read as a single covariate column)

    Returns:
        Immutable Dataset with the row-norm bound recorded

    Raises:
        DimensionError: Shapes are inconsistent or empty
        NonFiniteError: An entry is NaN or infinite (1-based row reported)
    """
    y_arr = np.array(y, dtype=float)
    x_arr = np.array(x, dtype=float)

    if y_arr.ndim != 1:
        raise DimensionError(f"y must be a vector, got shape {y_arr.shape}")
    if x_arr.ndim == 1:
        x_arr = x_arr.reshape(-1, 1)
    if x_arr.ndim != 2:
        raise DimensionError(f"x must be a matrix, got shape {x_arr.shape}")
    if y_arr.shape[0] != x_arr.shape[0]:
        raise DimensionError(
            f"y has {y_arr.shape[0]} entries but x has {x_arr.shape[0]} rows"
        )
    if y_arr.shape[0] < 1 or x_arr.shape[1] < 1:
        raise DimensionError(f"Need n >= 1 and p >= 1, got x of shape {x_arr.shape}")

    bad = ~(np.isfinite(y_arr) & np.isfinite(x_arr).all(axis=1))
    if bad.any():
        row = int(np.flatnonzero(bad)[0]) + 1
        raise NonFiniteError(f"Non-finite value at row {row}", row=row)

    bound = float(np.abs(x_arr).max())
    return Dataset(y=_frozen(y_arr), x=_frozen(x_arr), bound=bound)


# =============================================================================
# Quantile grid
# =============================================================================


@dataclass(frozen=True)
class QuantileGrid:
    """Strictly increasing levels in (0, 1) with implicit endpoints 0 and 1."""

    levels: tuple[float, ...]

    @property
    def L(self) -> int:
        return len(self.levels)

    @property
    def extended(self) -> np.ndarray:
        """Levels with the virtual endpoints: (0, tau_1, ..., tau_L, 1)."""
        return np.concatenate([[0.0], self.levels, [1.0]])

    @property
    def spacings(self) -> np.ndarray:
        """Interval widths tau_l - tau_{l-1} for l = 1..L+1 (sums to 1)."""
        return np.diff(self.extended)


def make_grid(levels) -> QuantileGrid:
    """
    Validate quantile levels.

    Args:
        levels: Iterable of levels, strictly increasing, each in (0, 1)

    Returns:
        QuantileGrid

    Raises:
        GridError: Empty, out of range, unsorted or duplicated levels
    """
    values = tuple(float(v) for v in np.atleast_1d(np.asarray(levels, dtype=float)))
    if not values:
        raise GridError("Quantile grid must contain at least one level")
    for tau in values:
        if not (0.0 < tau < 1.0) or not np.isfinite(tau):
            raise GridError(f"Quantile level {tau} is outside (0, 1)")
    for lower, upper in zip(values, values[1:]):
        if upper == lower:
            raise GridError(f"Duplicate quantile level {lower}")
        if upper < lower:
            raise GridError(f"Quantile levels are not increasing: {lower} then {upper}")
    return QuantileGrid(levels=values)


# =============================================================================
# Coefficients
# =============================================================================


@dataclass(frozen=True, eq=False)
class CoefficientSet:
    """
    Coefficients beta(tau_l) as the columns of a p x L matrix.

    ``beta_plus`` / ``beta_minus`` hold the fits at tau_l + h and tau_l - h
    used for derivative estimation; ``dbeta`` is filled once derivatives are
    estimated.
    """

    beta: np.ndarray
    grid: QuantileGrid
    dbeta: np.ndarray | None = None
    beta_plus: np.ndarray | None = None
    beta_minus: np.ndarray | None = None
    h: float | None = None
    iterations: int = 0
    nonconverged: int = 0

    def __post_init__(self):
        if self.beta.ndim != 2 or self.beta.shape[1] != self.grid.L:
            raise DimensionError(
                f"beta must have {self.grid.L} columns, got shape {self.beta.shape}"
            )
        for name in ("dbeta", "beta_plus", "beta_minus"):
            value = getattr(self, name)
            if value is not None and value.shape != self.beta.shape:
                raise DimensionError(
                    f"{name} shape {value.shape} does not match beta {self.beta.shape}"
                )

    @property
    def p(self) -> int:
        return self.beta.shape[0]

    @property
    def has_offgrid(self) -> bool:
        return self.beta_plus is not None and self.beta_minus is not None and self.h is not None


# =============================================================================
# Fit configuration
# =============================================================================

DEFAULT_SEED = 20240607


@dataclass(frozen=True)
class FitConfig:
    """
    Numerical settings for one estimation run.

    Attributes:
        bandwidth: Explicit h; None selects the automatic c * n^exponent rule
        bandwidth_constant: c of the automatic rule
        bandwidth_exponent: Exponent of the automatic rule (in (-1/2, 0))
        density_floor: Clamp epsilon_f applied to x'dbeta before inversion
        solver_tolerance: Optimality tolerance of the pinball solver
        max_iterations: Interior-point iteration cap of the pinball solver
        seed: Master seed for bootstrap and simulation streams
        n_jobs: Worker count for replicate loops (joblib convention)
    """

    bandwidth: float | None = None
    bandwidth_constant: float = 1.0
    bandwidth_exponent: float = -0.2
    density_floor: float = 0.01
    solver_tolerance: float = 1e-9
    max_iterations: int = 200
    seed: int = DEFAULT_SEED
    n_jobs: int = 1

    def __post_init__(self):
        if self.bandwidth is not None and not self.bandwidth > 0:
            raise DataError(f"bandwidth must be positive, got {self.bandwidth}")
        if not self.bandwidth_constant > 0:
            raise DataError(f"bandwidth_constant must be positive, got {self.bandwidth_constant}")
        # h -> 0 and n h^2 -> infinity
        if not -0.5 < self.bandwidth_exponent < 0:
            raise DataError(
                f"bandwidth_exponent must lie in (-1/2, 0), got {self.bandwidth_exponent}"
            )
        if not self.density_floor > 0:
            raise DataError(f"density_floor must be positive, got {self.density_floor}")
        if not self.solver_tolerance > 0:
            raise DataError(f"solver_tolerance must be positive, got {self.solver_tolerance}")
        if self.max_iterations < 1:
            raise DataError(f"max_iterations must be >= 1, got {self.max_iterations}")

    @classmethod
    def from_env(cls, **overrides) -> "FitConfig":
        """Build a config from EFFQR_* environment variables, then apply overrides."""
        bandwidth = os.environ.get("EFFQR_BANDWIDTH")
        values = {
            "bandwidth": float(bandwidth) if bandwidth else None,
            "bandwidth_constant": float(os.environ.get("EFFQR_BANDWIDTH_CONSTANT", "1.0")),
            "density_floor": float(os.environ.get("EFFQR_DENSITY_FLOOR", "0.01")),
            "solver_tolerance": float(os.environ.get("EFFQR_TOLERANCE", "1e-9")),
            "max_iterations": int(os.environ.get("EFFQR_MAX_ITERATIONS", "200")),
            "seed": int(os.environ.get("EFFQR_SEED", str(DEFAULT_SEED))),
            "n_jobs": int(os.environ.get("EFFQR_JOBS", "1")),
        }
        values.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**values)
