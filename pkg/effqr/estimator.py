"""One-step efficient estimators (EFF, SEF) on top of the classical fit (TQE)."""

import logging
from dataclasses import dataclass, field, replace

import numpy as np
from joblib import Parallel, delayed
from scipy.stats import norm

from .core import Dataset, FitConfig, QuantileGrid
from .density import estimate_density
from .errors import DataError, EffQRError, NumericalError, ReplicationError, stage
from .pinball import fit_grid
from .score import (
    build_score_system,
    build_single_quantile_system,
    score_matrix,
    single_score_matrix,
)

logger = logging.getLogger(__name__)

ESTIMATORS = ("TQE", "SEF", "EFF")

# Fraction of bootstrap replicates allowed to fail before giving up
MAX_BOOTSTRAP_FAILURE_RATE = 0.10


def _by_coefficient(stacked: np.ndarray, p: int, L: int) -> np.ndarray:
    """Reshape a stacked pL vector (level-major) into p x L."""
    return np.asarray(stacked).reshape(L, p).T


# =============================================================================
# Point estimates
# =============================================================================


@dataclass(frozen=True)
class Diagnostics:
    """Counters surfaced alongside the estimates."""

    bandwidth: float
    clamped_cells: int
    crossings: int
    iterations: int
    nonconverged: int
    bound: float
    n: int

    def to_dict(self) -> dict:
        return {
            "bandwidth": self.bandwidth,
            "clamped_cells": self.clamped_cells,
            "crossings": self.crossings,
            "iterations": self.iterations,
            "nonconverged": self.nonconverged,
            "bound": self.bound,
            "n": self.n,
        }


@dataclass(frozen=True, eq=False)
class EstimateReport:
    """
    TQE, SEF and EFF estimates for every (coefficient j, level k).

    All arrays are p x L with rows indexed by coefficient and columns by level.
    ``eff = tqe + sigma2 * mean_score`` and ``sef = tqe + sef_sigma2 *
    sef_mean_score`` hold exactly as stored.
    """

    grid: QuantileGrid
    tqe: np.ndarray
    sef: np.ndarray
    eff: np.ndarray
    sigma2: np.ndarray
    sef_sigma2: np.ndarray
    mean_score: np.ndarray
    sef_mean_score: np.ndarray
    diagnostics: Diagnostics

    @property
    def p(self) -> int:
        return self.tqe.shape[0]

    @property
    def asymptotic_se(self) -> np.ndarray:
        """sqrt(sigma2 / n) for EFF."""
        return np.sqrt(self.sigma2 / self.diagnostics.n)

    @property
    def sef_asymptotic_se(self) -> np.ndarray:
        return np.sqrt(self.sef_sigma2 / self.diagnostics.n)

    def estimates(self, name: str) -> np.ndarray:
        """Estimates of one estimator by name (TQE, SEF or EFF)."""
        table = {"TQE": self.tqe, "SEF": self.sef, "EFF": self.eff}
        if name not in table:
            raise ValueError(f"Unknown estimator {name!r}, expected one of {ESTIMATORS}")
        return table[name]

    def stacked(self) -> np.ndarray:
        """Array of shape (3, p, L) in TQE, SEF, EFF order."""
        return np.stack([self.tqe, self.sef, self.eff])


def estimate(data: Dataset, grid: QuantileGrid, cfg: FitConfig | None = None) -> EstimateReport:
    """
    Run the full one-step pipeline.

    1. Fit beta at every level and at tau_l +/- h.
    2. Estimate beta_dot and the conditional densities.
    3. Solve the multi-level and per-level information systems and average
       the scores over the sample.
    4. Update: beta_j(tau_k) + sigma2_kj * mean score.

    Args:
        data: Regression sample
        grid: Quantile levels
        cfg: Fit configuration

    Returns:
        EstimateReport

    Raises:
        EffQRError: Any stage failure, with the stage recorded on the error
    """
    cfg = cfg or FitConfig()
    p, L = data.p, grid.L

    with stage("fit"):
        coeffs = fit_grid(data, grid, cfg)
    logger.debug("Fitted %d levels (h=%.4f)", L, coeffs.h)

    with stage("density"):
        dens = estimate_density(data, coeffs, cfg)
        coeffs = replace(coeffs, dbeta=dens.dbeta_hat)

    with stage("score"):
        system = build_score_system(data, dens, grid)
        single = build_single_quantile_system(data, dens, grid)
        psi, crossings = score_matrix(data, coeffs, dens)
        psi_single = single_score_matrix(data, coeffs, dens)
        mean_psi = psi.mean(axis=0)
        mean_score = np.einsum("m,mk->k", mean_psi, system.directions)
        sef_mean_score = np.einsum("m,mk->k", psi_single.mean(axis=0), single.directions)

    with stage("update"):
        tqe = coeffs.beta.copy()
        sigma2 = _by_coefficient(system.sigma2, p, L)
        sef_sigma2 = _by_coefficient(single.sigma2, p, L)
        mean_score = _by_coefficient(mean_score, p, L)
        sef_mean_score = _by_coefficient(sef_mean_score, p, L)
        eff = tqe + sigma2 * mean_score
        sef = tqe + sef_sigma2 * sef_mean_score
        if not np.all(np.isfinite(eff)) or not np.all(np.isfinite(sef)):
            raise NumericalError("One-step update produced non-finite estimates")

    diagnostics = Diagnostics(
        bandwidth=float(coeffs.h),
        clamped_cells=dens.clamped_count,
        crossings=crossings,
        iterations=coeffs.iterations,
        nonconverged=coeffs.nonconverged,
        bound=data.bound,
        n=data.n,
    )
    logger.debug("Estimation complete: n=%d p=%d L=%d", data.n, p, L)
    return EstimateReport(
        grid=grid,
        tqe=tqe,
        sef=sef,
        eff=eff,
        sigma2=sigma2,
        sef_sigma2=sef_sigma2,
        mean_score=mean_score,
        sef_mean_score=sef_mean_score,
        diagnostics=diagnostics,
    )


# =============================================================================
# Bootstrap
# =============================================================================


@dataclass(frozen=True, eq=False)
class BootstrapResult:
    """
    Bootstrap standard errors for the full-sample estimates.

    ``est``, ``esd`` and ``p_value`` have shape (3, p, L) in TQE, SEF, EFF
    order. p-values follow 1 - Phi(|Est / Esd|).
    """

    report: EstimateReport
    est: np.ndarray
    esd: np.ndarray
    p_value: np.ndarray
    replications: int
    failures: int
    seed: int
    draws: np.ndarray = field(repr=False)


def p_values(est: np.ndarray, esd: np.ndarray) -> np.ndarray:
    """1 - Phi(|est / esd|); a zero Esd gives 0, or 0.5 when est is also 0."""
    est = np.asarray(est, dtype=float)
    esd = np.asarray(esd, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.abs(est) / esd
    z = np.where(esd > 0, z, np.where(est == 0, 0.0, np.inf))
    return norm.sf(z)


def _replicate(data: Dataset, grid: QuantileGrid, cfg: FitConfig, seed) -> np.ndarray | None:
    rng = np.random.default_rng(seed)
    rows = rng.integers(0, data.n, size=data.n)
    try:
        return estimate(data.take(rows), grid, cfg).stacked()
    except EffQRError as exc:
        logger.info("Bootstrap replicate skipped: %s", exc)
        return None


def bootstrap_se(
    data: Dataset,
    grid: QuantileGrid,
    cfg: FitConfig | None = None,
    replications: int = 1000,
    seed: int | None = None,
) -> BootstrapResult:
    """
    Pairs bootstrap of the whole estimation pipeline.

    Each replicate resamples (y_i, x_i) rows with replacement from its own
    child of ``SeedSequence(seed)``, so results do not depend on n_jobs.

    Args:
        data: Regression sample
        grid: Quantile levels
        cfg: Fit configuration (n_jobs controls parallelism)
        replications: Number of bootstrap replicates (>= 2)
        seed: Master seed; defaults to cfg.seed

    Returns:
        BootstrapResult

    Raises:
        EffQRError: The full-sample estimate failed
        ReplicationError: More than 10% of replicates failed
    """
    cfg = cfg or FitConfig()
    if replications < 2:
        raise DataError(f"Bootstrap needs at least 2 replications, got {replications}")
    seed = cfg.seed if seed is None else seed

    report = estimate(data, grid, cfg)

    children = np.random.SeedSequence(seed).spawn(replications)
    with stage("bootstrap"):
        results = Parallel(n_jobs=cfg.n_jobs)(
            delayed(_replicate)(data, grid, cfg, child) for child in children
        )

        draws = [r for r in results if r is not None]
        failures = replications - len(draws)
        if failures > MAX_BOOTSTRAP_FAILURE_RATE * replications or len(draws) < 2:
            raise ReplicationError(
                f"{failures} of {replications} bootstrap replicates failed"
            )
    if failures:
        logger.warning("%d of %d bootstrap replicates skipped", failures, replications)
    logger.info("Bootstrap finished: %d replicates", len(draws))

    draws = np.stack(draws)
    est = report.stacked()
    esd = draws.std(axis=0, ddof=1)
    return BootstrapResult(
        report=report,
        est=est,
        esd=esd,
        p_value=p_values(est, esd),
        replications=replications,
        failures=failures,
        seed=seed,
        draws=draws,
    )


def asymptotic_inference(report: EstimateReport) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Est, Esd and p-values from the variance bounds, each of shape (3, p, L).

    Esd is sqrt(sigma2 / n) for SEF and EFF. The classical fit has no analytic
    standard error here, so its Esd and p-value are NaN.
    """
    est = report.stacked()
    esd = np.stack(
        [np.full_like(report.tqe, np.nan), report.sef_asymptotic_se, report.asymptotic_se]
    )
    p_value = np.where(np.isnan(esd), np.nan, p_values(est, np.nan_to_num(esd)))
    return est, esd, p_value
