"""Brute-force verifiers for the solver, the direction solve and the score algebra.

Each check is written independently of the production path it certifies:
vertex enumeration for the pinball fit, variable elimination for the
constrained quadratic, and closed forms for the one-covariate reduction and
the two-level variance comparison.
"""

import logging
from dataclasses import dataclass
from itertools import combinations
from typing import Callable, Sequence

import numpy as np
from scipy.special import logit
from scipy.stats import norm

from .core import Dataset, FitConfig, make_dataset, make_grid
from .density import DensityEstimates
from .errors import NotPositiveDefiniteError, OraclePreconditionError, RankDeficientError
from .pinball import fit_quantile
from .score import assemble_A, assemble_B, assemble_U, solve_directions

logger = logging.getLogger(__name__)

MAX_VERTEX_ROWS = 50
MAX_VERTEX_COLUMNS = 3
MAX_QUADRATIC_DIM = 12


@dataclass(frozen=True)
class OracleReport:
    """Outcome of one oracle check."""

    check: str
    instance: str
    discrepancy: float
    tolerance: float
    passed: bool

    def to_row(self) -> list[str]:
        return [
            self.check,
            self.instance,
            f"{self.discrepancy:.3e}",
            f"{self.tolerance:.1e}",
            "pass" if self.passed else "FAIL",
        ]


def _report(check: str, instance: str, discrepancy: float, tolerance: float) -> OracleReport:
    discrepancy = float(abs(discrepancy))
    return OracleReport(
        check=check,
        instance=instance,
        discrepancy=discrepancy,
        tolerance=tolerance,
        passed=bool(discrepancy <= tolerance),
    )


# =============================================================================
# Pinball vertices
# =============================================================================


def _check_loss(residuals: np.ndarray, tau: float) -> np.ndarray:
    return np.where(residuals < 0, (tau - 1.0) * residuals, tau * residuals)


def pinball_vertex_oracle(data: Dataset, tau: float) -> np.ndarray:
    """
    Exact pinball minimizer by enumerating every basic solution.

    Every p-subset of observations with a nonsingular design block defines a
    candidate beta interpolating those p points; the optimum is one of them.
    Among optimal candidates the lexicographically smallest is returned.

    Raises:
        OraclePreconditionError: n > 50 or p > 3
        RankDeficientError: Every subset is singular
    """
    if data.n > MAX_VERTEX_ROWS or data.p > MAX_VERTEX_COLUMNS:
        raise OraclePreconditionError(
            f"Vertex enumeration is capped at n <= {MAX_VERTEX_ROWS}, p <= {MAX_VERTEX_COLUMNS}; "
            f"got n={data.n}, p={data.p}"
        )
    subsets = np.array(list(combinations(range(data.n), data.p)), dtype=int)
    blocks = data.x[subsets]
    scale = max(1.0, float(np.abs(data.x).max())) ** data.p
    nonsingular = np.abs(np.linalg.det(blocks)) > 1e-10 * scale
    if not nonsingular.any():
        raise RankDeficientError("Every p-subset of the design is singular")

    candidates = np.linalg.solve(blocks[nonsingular], data.y[subsets[nonsingular]][..., None])[..., 0]
    losses = _check_loss(data.y[None, :] - candidates @ data.x.T, tau).sum(axis=1)
    best = losses.min()
    optimal = candidates[losses <= best + 1e-10 * max(1.0, abs(best))]
    order = np.lexsort(optimal.T[::-1])
    return optimal[order[0]]


# =============================================================================
# Constrained quadratic
# =============================================================================


def quadratic_min_oracle(U: np.ndarray, m: int) -> tuple[np.ndarray, float]:
    """
    Minimize d'Ud subject to d_m = 1 by eliminating d_m.

    With r the remaining coordinates, d_r = -U_rr^{-1} U_rm and the minimum
    is U_mm + U_mr d_r.

    Raises:
        OraclePreconditionError: Dimension above 12
        NotPositiveDefiniteError: U is not symmetric positive definite
    """
    U = np.asarray(U, dtype=float)
    size = U.shape[0]
    if size > MAX_QUADRATIC_DIM:
        raise OraclePreconditionError(
            f"Quadratic oracle is capped at dimension {MAX_QUADRATIC_DIM}, got {size}"
        )
    eigenvalues = np.linalg.eigvalsh((U + U.T) / 2.0)
    if not np.allclose(U, U.T, atol=1e-12) or eigenvalues.min() <= 0:
        raise NotPositiveDefiniteError(
            "Quadratic oracle needs a symmetric positive-definite matrix",
            min_eigenvalue=float(eigenvalues.min()),
        )

    rest = np.array([i for i in range(size) if i != m], dtype=int)
    d = np.zeros(size)
    d[m] = 1.0
    if rest.size:
        d[rest] = -np.linalg.solve(U[np.ix_(rest, rest)], U[rest, m])
    value = float(U[m, m] + U[m, rest] @ d[rest])
    return d, value


# =============================================================================
# One-covariate reduction
# =============================================================================


def _interval_score(y, boundaries, a, spacings) -> np.ndarray:
    """Centered interval form of the score, evaluated for a vector of y."""
    y = np.asarray(y, dtype=float)
    interval = np.searchsorted(boundaries, y, side="right")
    coef = (a[:-1] - a[1:]) / spacings
    return coef[interval] - np.sum(coef * spacings)


def p1_reduction_check(
    levels: Sequence[float],
    beta: Callable,
    dbeta: Callable,
    x: float = 1.0,
    perturbation: float = 0.0,
    tolerance: float = 1e-8,
) -> OracleReport:
    """
    With one covariate the efficient score collapses to a single bracket.

    For p = 1, f(x beta(tau_l)) x = 1 / beta_dot(tau_l), so with r_l =
    d_l / beta_dot(tau_l) and r_0 = r_{L+1} = 0 the optimal direction for
    level k satisfies the stationarity condition

        (tau_{l+1} - tau_l)(r_{l-1} - r_l) = (tau_l - tau_{l-1})(r_l - r_{l+1}),  l != k

    and the score equals
        [(r_k - r_{k+1})/(tau_{k+1} - tau_k) - (r_{k-1} - r_k)/(tau_k - tau_{k-1})]
        * (tau_k - I{y < beta(tau_k) x}).

    Both facts are checked for every k on a y grid covering all intervals.

    Args:
        levels: Quantile grid
        beta: tau -> beta(tau) (scalar, increasing)
        dbeta: tau -> beta_dot(tau) > 0
        x: Covariate value (> 0)
        perturbation: Added to the unconstrained entries of d; nonzero values
            break optimality and should make the check fail
        tolerance: Pass threshold on the discrepancy

    Returns:
        OracleReport with the largest discrepancy over k, y and l
    """
    grid = make_grid(levels)
    tau = np.asarray(grid.levels)
    spacings = grid.spacings
    L = grid.L
    if not x > 0:
        raise ValueError(f"x must be positive, got {x}")

    slope = np.array([float(dbeta(t)) for t in tau])
    if np.any(slope <= 0):
        raise ValueError("beta_dot must be positive on the grid")
    boundaries = np.array([float(beta(t)) for t in tau]) * x
    fx = 1.0 / slope

    # U for p = 1 with E replaced by the point mass at x
    U = np.zeros((L, L))
    for l in range(L):
        U[l, l] = fx[l] ** 2 * (1.0 / spacings[l] + 1.0 / spacings[l + 1])
        if l + 1 < L:
            U[l, l + 1] = U[l + 1, l] = -fx[l] * fx[l + 1] / spacings[l + 1]

    span = boundaries[-1] - boundaries[0] + 1.0
    ys = np.concatenate(
        [np.linspace(boundaries[0] - span, boundaries[-1] + span, 201), boundaries]
    )

    worst = 0.0
    for k in range(L):
        d, _ = quadratic_min_oracle(U, k)
        d = d + perturbation * (np.arange(L) != k)
        r = np.concatenate([[0.0], d * fx, [0.0]])

        # stationarity at every unconstrained level
        for l in range(1, L + 1):
            if l - 1 == k:
                continue
            residual = spacings[l] * (r[l - 1] - r[l]) - spacings[l - 1] * (r[l] - r[l + 1])
            worst = max(worst, abs(residual))

        full = _interval_score(ys, boundaries, r, spacings)
        bracket = (r[k + 1] - r[k + 2]) / spacings[k + 1] - (r[k] - r[k + 1]) / spacings[k]
        collapsed = bracket * (tau[k] - (ys < boundaries[k]))
        worst = max(worst, float(np.abs(full - collapsed).max()))

    instance = f"L={L} x={x:g} perturbation={perturbation:g}"
    return _report("p1_reduction", instance, worst, tolerance)


# =============================================================================
# Two-level variance comparison
# =============================================================================


def efficiency_gain_check(
    tau1,
    tau2,
    a1,
    a2,
    tolerance: float = 1e-12,
) -> OracleReport:
    """
    Compare the two-level and one-level second moments of the score.

    With a_l = f(x'beta(tau_l)) x'd(tau_l):
        Q1 = a1^2 / (tau1 (1 - tau1))
        Q2 = a1^2/tau1 + a2^2/(1 - tau2) + (a1 - a2)^2/(tau2 - tau1)
    and Q2 - Q1 = (sqrt(r) a1 - a2/sqrt(r))^2 / (tau2 - tau1), r = (1-tau2)/(1-tau1).

    The discrepancy is the larger of the relative disagreement between the
    direct difference and the completed square and the most negative value
    of the difference. Inputs broadcast, so many instances can be checked at once.
    """
    tau1, tau2, a1, a2 = (np.asarray(v, dtype=float) for v in (tau1, tau2, a1, a2))
    if np.any(tau1 <= 0) or np.any(tau2 >= 1) or np.any(tau2 <= tau1):
        raise ValueError("Need 0 < tau1 < tau2 < 1")

    width = tau2 - tau1
    q1 = a1**2 / (tau1 * (1.0 - tau1))
    q2 = a1**2 / tau1 + a2**2 / (1.0 - tau2) + (a1 - a2) ** 2 / width
    direct = q2 - q1

    r = (1.0 - tau2) / (1.0 - tau1)
    completed = (np.sqrt(r) * a1 - a2 / np.sqrt(r)) ** 2 / width

    scale = np.maximum(1.0, np.maximum(q1, q2))
    disagreement = np.abs(direct - completed) / scale
    negativity = np.maximum(-direct / scale, 0.0)
    discrepancy = float(np.max(np.maximum(disagreement, negativity)))

    instance = f"{direct.size} instance(s), min Q2-Q1={float(np.min(direct)):.3e}"
    return _report("efficiency_gain", instance, discrepancy, tolerance)


# =============================================================================
# Self-test
# =============================================================================


def _random_spd(rng: np.random.Generator, size: int) -> np.ndarray:
    a = rng.normal(size=(size, size))
    return a @ a.T + size * np.eye(size)


def run_selftest(seed: int = 0, instances: int = 20) -> list[OracleReport]:
    """
    Run every oracle against the production code on random instances.

    Args:
        seed: Seed for instance generation
        instances: Random instances per check

    Returns:
        One OracleReport per check
    """
    rng = np.random.default_rng(seed)
    cfg = FitConfig()
    reports = []

    worst = 0.0
    for _ in range(instances):
        n, p = int(rng.integers(8, 31)), int(rng.integers(1, 4))
        x = np.column_stack([np.ones(n), rng.normal(size=(n, p - 1))])
        y = x @ rng.normal(size=p) + rng.standard_t(3, size=n)
        data = make_dataset(y, x)
        tau = float(rng.uniform(0.1, 0.9))
        expected = pinball_vertex_oracle(data, tau)
        fitted = fit_quantile(data, tau, cfg).beta_hat
        worst = max(worst, float(np.abs(fitted - expected).max()))
    reports.append(_report("pinball_vertex", f"{instances} instances, n<=30, p<=3", worst, 1e-8))

    worst = 0.0
    for _ in range(instances):
        U = _random_spd(rng, int(rng.integers(1, MAX_QUADRATIC_DIM + 1)))
        directions, sigma2 = solve_directions(U)
        for m in range(U.shape[0]):
            d, value = quadratic_min_oracle(U, m)
            worst = max(worst, float(np.abs(directions[:, m] - d).max()), abs(sigma2[m] - 1.0 / value))
    reports.append(_report("quadratic_min", f"{instances} SPD instances, dim<=12", worst, 1e-9))

    worst = 0.0
    for _ in range(instances):
        n, p, L = int(rng.integers(5, 40)), int(rng.integers(1, 4)), int(rng.integers(1, 5))
        levels = np.sort(rng.choice(np.arange(1, 20), size=L, replace=False)) / 20.0
        grid = make_grid(levels)
        data = make_dataset(rng.normal(size=n), rng.normal(size=(n, p)))
        f_hat = rng.uniform(0.2, 3.0, size=(n, L))
        dens = DensityEstimates(
            f_hat=f_hat,
            dbeta_hat=np.ones((p, L)),
            h=0.01,
            clamped_count=0,
            clamped=np.zeros((n, L), dtype=bool),
        )
        B = assemble_B(p, L)
        direct = assemble_U(data, dens, grid)
        worst = max(worst, float(np.abs(B @ assemble_A(data, dens, grid) @ B.T - direct).max()))
    reports.append(_report("u_assembly", f"{instances} instances, L<=4, p<=3", worst, 1e-10))

    analytic = [
        ((0.3, 0.5, 0.7), norm.ppf, lambda t: 1.0 / norm.pdf(norm.ppf(t))),
        ((0.1, 0.25, 0.5, 0.9), logit, lambda t: 1.0 / (t * (1.0 - t))),
        ((0.5,), norm.ppf, lambda t: 1.0 / norm.pdf(norm.ppf(t))),
    ]
    for levels, beta, dbeta in analytic:
        reports.append(p1_reduction_check(levels, beta, dbeta, x=float(rng.uniform(0.5, 2.0))))

    tau1 = rng.uniform(0.01, 0.98, size=10_000)
    tau2 = tau1 + rng.uniform(0.0, 1.0, size=10_000) * (0.99 - tau1) + 1e-6
    tau2 = np.minimum(tau2, 0.999)
    a1 = rng.normal(size=10_000)
    a2 = rng.normal(size=10_000)
    reports.append(efficiency_gain_check(tau1, tau2, a1, a2))

    for report in reports:
        logger.info("%s: %s (%.3e)", report.check, "pass" if report.passed else "FAIL", report.discrepancy)
    return reports
