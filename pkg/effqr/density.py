"""Derivative of the quantile coefficients and the implied conditional density.

Under the linear model the conditional density at the tau-quantile is
f(x'beta(tau)) = 1 / (x'beta_dot(tau)), so no kernel smoothing of f is needed:
only beta_dot, estimated by a symmetric difference quotient.
"""

import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import CoefficientSet, Dataset, FitConfig, QuantileGrid
from .errors import BandwidthError, DataError, DensityError

logger = logging.getLogger(__name__)

# Largest bandwidth the automatic rule returns; larger raw values are capped with a warning
DEGENERATE_BANDWIDTH = 0.5


@dataclass(frozen=True, eq=False)
class DensityEstimates:
    """
    Plug-in conditional densities at every observation and grid level.

    Attributes:
        f_hat: n x L, entry (i, l) estimates f(x_i'beta(tau_l)) given x_i
        dbeta_hat: p x L derivative estimates
        h: Bandwidth used for the difference quotient
        clamped_count: Cells where x_i'dbeta fell below the density floor
        clamped: n x L mask of the clamped cells
    """

    f_hat: np.ndarray
    dbeta_hat: np.ndarray
    h: float
    clamped_count: int
    clamped: np.ndarray

    def row(self, i: int) -> np.ndarray:
        """Densities at observation ``i`` across the grid."""
        return self.f_hat[i]


def estimate_derivative(fits_plus: np.ndarray, fits_minus: np.ndarray, h: float) -> np.ndarray:
    """Symmetric difference quotient (beta(tau + h) - beta(tau - h)) / (2h)."""
    if not h > 0:
        raise BandwidthError(f"Bandwidth must be positive, got {h}")
    return (np.asarray(fits_plus, dtype=float) - np.asarray(fits_minus, dtype=float)) / (2.0 * h)


def default_bandwidth(
    n: int,
    levels: Sequence[float] | None = None,
    constant: float = 1.0,
    exponent: float = -0.2,
) -> float:
    """
    Automatic bandwidth c * n^exponent.

    With an exponent in (-1/2, 0) the rule gives h -> 0 and n h^2 -> infinity.
    h never exceeds DEGENERATE_BANDWIDTH. When levels are given, h is also
    capped at min(tau_1, 1 - tau_L) / 2 so the off-grid fits stay inside (0, 1).

    Args:
        n: Sample size (>= 2)
        levels: Grid levels, optional
        constant: c
        exponent: Rate exponent

    Returns:
        Bandwidth h

    Raises:
        DataError: n < 2
    """
    if n < 2:
        raise DataError(f"Need at least 2 observations to pick a bandwidth, got n={n}")
    h = constant * float(n) ** exponent
    if h > DEGENERATE_BANDWIDTH:
        logger.warning("Bandwidth %.4f for n=%d is degenerate; capping to %.2f", h, n, DEGENERATE_BANDWIDTH)
        h = DEGENERATE_BANDWIDTH
    if levels is not None and len(levels) > 0:
        cap = min(levels[0], 1.0 - levels[-1]) / 2.0
        if h > cap:
            logger.debug("Bandwidth %.4f capped to %.4f by the grid", h, cap)
            h = cap
    return h


def resolve_bandwidth(n: int, grid: QuantileGrid, cfg: FitConfig) -> float:
    """
    Bandwidth for a run: the configured value if any, else the automatic rule.

    Raises:
        BandwidthError: An explicit h pushes tau_1 - h or tau_L + h outside (0, 1)
    """
    if cfg.bandwidth is None:
        return default_bandwidth(n, grid.levels, cfg.bandwidth_constant, cfg.bandwidth_exponent)

    h = cfg.bandwidth
    if not (grid.levels[0] - h > 0.0 and grid.levels[-1] + h < 1.0):
        raise BandwidthError(
            f"Bandwidth {h} moves the grid {grid.levels} outside (0, 1)"
        )
    return h


def estimate_density(data: Dataset, coeffs: CoefficientSet, cfg: FitConfig | None = None) -> DensityEstimates:
    """
    Estimate f(x_i'beta(tau_l)) = 1 / max(x_i'dbeta(tau_l), floor).

    Args:
        data: The sample the coefficients were fitted on
        coeffs: Grid fits including the tau_l +/- h fits
        cfg: Supplies the density floor

    Returns:
        DensityEstimates

    Raises:
        DensityError: Off-grid fits are missing, or every cell of a level is
            clamped (the fitted quantile function is flat there)
    """
    cfg = cfg or FitConfig()
    if not coeffs.has_offgrid:
        raise DensityError("Coefficient set carries no tau +/- h fits")

    dbeta = estimate_derivative(coeffs.beta_plus, coeffs.beta_minus, coeffs.h)
    slope = data.x @ dbeta
    clamped = slope < cfg.density_floor
    f_hat = 1.0 / np.where(clamped, cfg.density_floor, slope)

    flat = np.flatnonzero(clamped.all(axis=0))
    if flat.size:
        tau = coeffs.grid.levels[int(flat[0])]
        raise DensityError(f"Estimated quantile function is flat at tau={tau}")

    count = int(clamped.sum())
    if count:
        logger.warning(
            "Density floor %.3g applied to %d of %d cells", cfg.density_floor, count, clamped.size
        )
    return DensityEstimates(
        f_hat=f_hat, dbeta_hat=dbeta, h=coeffs.h, clamped_count=count, clamped=clamped
    )
