"""Koenker-Bassett fits: minimize the pinball objective at one level or a grid."""

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.optimize import linprog

from .core import CoefficientSet, Dataset, FitConfig, QuantileGrid
from .density import resolve_bandwidth
from .errors import GridError, RankDeficientError, SolverError

logger = logging.getLogger(__name__)

# Relative size below which a residual counts as an exact interpolation
ZERO_RESIDUAL = 1e-9


@dataclass(frozen=True, eq=False)
class PinballFit:
    """
    Result of one pinball-loss minimization.

    Attributes:
        beta_hat: Coefficient vector (length p)
        level: Quantile level tau
        objective_value: sum_i rho_tau(y_i - x_i'beta_hat)
        iterations: Interior-point iterations plus polish passes
        converged: False when the iteration cap was hit
        objective_trace: Objective after each solver stage (non-increasing)
    """

    beta_hat: np.ndarray
    level: float
    objective_value: float
    iterations: int
    converged: bool
    objective_trace: tuple[float, ...] = field(default=())


def pinball_loss(u, tau: float):
    """
    Check loss rho_tau(u) = u * (tau - I(u < 0)).

    Args:
        u: Residual (scalar or array)
        tau: Quantile level in (0, 1)

    Returns:
        Loss with the same shape as ``u``
    """
    if not 0.0 < tau < 1.0:
        raise ValueError(f"tau must lie in (0, 1), got {tau}")
    u = np.asarray(u, dtype=float)
    loss = u * (tau - (u < 0))
    return float(loss) if loss.ndim == 0 else loss


def objective(data: Dataset, beta: np.ndarray, tau: float) -> float:
    """Pinball objective sum_i rho_tau(y_i - x_i'beta)."""
    return float(np.sum(pinball_loss(data.y - data.x @ beta, tau)))


# =============================================================================
# Linear program
# =============================================================================


def _lp_pieces(data: Dataset, tau: float):
    """Cost, equality system and bounds over (beta, u+, u-) with y = x beta + u+ - u-."""
    n, p = data.n, data.p
    cost = np.concatenate([np.zeros(p), np.full(n, tau), np.full(n, 1.0 - tau)])
    eye = sparse.identity(n, format="csr")
    a_eq = sparse.hstack([sparse.csr_matrix(data.x), eye, -eye], format="csr")
    bounds = [(None, None)] * p + [(0, None)] * (2 * n)
    return cost, a_eq, bounds


def _check_rank(data: Dataset) -> None:
    rank = np.linalg.matrix_rank(data.x)
    if rank < data.p:
        raise RankDeficientError(
            f"Design has rank {rank} but {data.p} columns (n={data.n})"
        )


def _zero_tol(data: Dataset) -> float:
    return ZERO_RESIDUAL * max(1.0, float(np.abs(data.y).max()))


# =============================================================================
# Vertex polish
# =============================================================================


def _basis_rows(x: np.ndarray, order: np.ndarray) -> np.ndarray | None:
    """First p rows along ``order`` that together have full rank."""
    p = x.shape[1]
    chosen: list[int] = []
    for row in order:
        trial = chosen + [int(row)]
        if np.linalg.matrix_rank(x[trial]) == len(trial):
            chosen = trial
            if len(chosen) == p:
                return np.array(chosen)
    return None


def _snap_to_vertex(data: Dataset, beta: np.ndarray):
    """Interpolate the p observations closest to the fitted plane.

    Returns (beta_vertex, basis) or (None, None) if no nonsingular basis exists.
    """
    residuals = np.abs(data.y - data.x @ beta)
    basis = _basis_rows(data.x, np.argsort(residuals, kind="stable"))
    if basis is None:
        return None, None
    return np.linalg.solve(data.x[basis], data.y[basis]), basis


def _has_flat_edge(data: Dataset, beta: np.ndarray, basis: np.ndarray, tau: float) -> bool:
    """
    Check whether an edge leaving the vertex keeps the objective constant.

    Edges from the vertex release one basis row j at a time, moving beta
    along +/- X_h^{-1} e_j. Their one-sided directional derivatives are
    nonnegative at an optimum; a (near) zero one means the optimal set
    is a face rather than the single vertex.
    """
    n = data.n
    coef = data.x @ np.linalg.inv(data.x[basis])
    residuals = data.y - data.x @ beta
    off_basis = np.ones(n, dtype=bool)
    off_basis[basis] = False

    zero = off_basis & (np.abs(residuals) <= _zero_tol(data))
    moving = off_basis & ~zero

    psi = tau - (residuals[moving] < 0)
    xi = psi @ coef[moving]
    pos, neg = np.maximum(coef[zero], 0.0), np.maximum(-coef[zero], 0.0)
    d_plus = (1.0 - tau) - xi + ((1.0 - tau) * pos + tau * neg).sum(axis=0)
    d_minus = tau + xi + (tau * pos + (1.0 - tau) * neg).sum(axis=0)

    threshold = 1e-9 * n
    return bool(min(d_plus.min(), d_minus.min()) <= threshold)


def _lexicographic_minimum(
    data: Dataset, tau: float, optimum: float, cfg: FitConfig
) -> np.ndarray:
    """Lexicographically smallest beta on the optimal face (left endpoint rule)."""
    p = data.p
    cost, a_eq, bounds = _lp_pieces(data, tau)
    slack = cfg.solver_tolerance * max(1.0, abs(optimum))
    a_ub = sparse.csr_matrix(cost.reshape(1, -1))
    b_ub = np.array([optimum + slack])
    bounds = list(bounds)
    beta = np.zeros(p)

    for j in range(p):
        c = np.zeros_like(cost)
        c[j] = 1.0
        res = linprog(
            c, A_ub=a_ub, b_ub=b_ub, A_eq=a_eq, b_eq=data.y, bounds=bounds, method="highs"
        )
        if res.x is None:
            raise SolverError(f"Tie-break pass failed at coordinate {j}: {res.message}")
        beta[j] = res.x[j]
        bounds[j] = (None, beta[j] + slack * (1.0 + abs(beta[j])))
    return beta


# =============================================================================
# Fitting
# =============================================================================


def fit_quantile(data: Dataset, tau: float, cfg: FitConfig | None = None) -> PinballFit:
    """
    Minimize sum_i rho_tau(y_i - x_i'beta) over beta.

    HiGHS interior point (with crossover) supplies the optimum, which is then
    snapped to the exact vertex interpolating p observations. When the vertex
    sits on a flat optimal face, the lexicographically smallest optimal
    vertex is reported instead. A run stopped at the iteration cap without an
    iterate restarts the vertex snap from the least-squares fit and is
    flagged non-converged.

    Args:
        data: Regression sample (x must have full column rank)
        tau: Quantile level in (0, 1)
        cfg: Solver settings (defaults to FitConfig())

    Returns:
        PinballFit

    Raises:
        RankDeficientError: x does not have full column rank
        SolverError: The solver failed for a reason other than the iteration cap
    """
    cfg = cfg or FitConfig()
    if not 0.0 < tau < 1.0:
        raise GridError(f"Quantile level {tau} is outside (0, 1)")
    _check_rank(data)

    cost, a_eq, bounds = _lp_pieces(data, tau)
    res = linprog(
        cost,
        A_eq=a_eq,
        b_eq=data.y,
        bounds=bounds,
        method="highs-ipm",
        options={
            "maxiter": cfg.max_iterations,
            "ipm_optimality_tolerance": max(cfg.solver_tolerance, 1e-12),
        },
    )
    converged = res.status == 0
    if not converged:
        logger.warning("Pinball solver stopped early at tau=%s: %s", tau, res.message)

    if res.x is not None:
        beta = np.array(res.x[: data.p])
    elif res.status == 1:
        # Interior point at the cap may drop its iterate; any beta is feasible.
        beta = np.linalg.lstsq(data.x, data.y, rcond=None)[0]
    else:
        raise SolverError(f"Pinball solver failed at tau={tau}: {res.message}")

    value = objective(data, beta, tau)
    trace = [value]
    iterations = int(getattr(res, "nit", 0) or 0)
    slack = cfg.solver_tolerance * max(1.0, abs(value))

    vertex, basis = _snap_to_vertex(data, beta)
    iterations += 1
    flat = True
    if vertex is not None:
        vertex_value = objective(data, vertex, tau)
        if vertex_value <= value + slack:
            beta, value = vertex, vertex_value
            trace.append(value)
            flat = _has_flat_edge(data, beta, basis, tau)
        else:
            logger.debug("Vertex snap rejected at tau=%s (%.3g > %.3g)", tau, vertex_value, value)

    if flat and converged:
        logger.debug("Flat optimum at tau=%s; taking the lexicographic minimum", tau)
        lex = _lexicographic_minimum(data, tau, value, cfg)
        iterations += data.p
        lex_vertex, _ = _snap_to_vertex(data, lex)
        if lex_vertex is not None and objective(data, lex_vertex, tau) <= value + slack:
            lex = lex_vertex
        lex_value = objective(data, lex, tau)
        if lex_value <= value + slack:
            beta, value = lex, lex_value
            trace.append(value)

    logger.debug("tau=%s objective=%.10g iterations=%d", tau, value, iterations)
    return PinballFit(
        beta_hat=beta,
        level=float(tau),
        objective_value=value,
        iterations=iterations,
        converged=converged,
        objective_trace=tuple(trace),
    )


def fit_grid(data: Dataset, grid: QuantileGrid, cfg: FitConfig | None = None) -> CoefficientSet:
    """
    Fit every grid level plus the off-grid levels tau_l +/- h.

    The bandwidth comes from :func:`effqr.density.resolve_bandwidth`, so the
    off-grid fits are always inside (0, 1).

    Args:
        data: Regression sample
        grid: Quantile levels
        cfg: Solver and bandwidth settings

    Returns:
        CoefficientSet with beta, beta_plus, beta_minus and h populated
    """
    cfg = cfg or FitConfig()
    h = resolve_bandwidth(data.n, grid, cfg)

    columns: dict[str, list[np.ndarray]] = {"beta": [], "plus": [], "minus": []}
    iterations = 0
    nonconverged = 0
    for tau in grid.levels:
        for key, level in (("beta", tau), ("plus", tau + h), ("minus", tau - h)):
            fit = fit_quantile(data, level, cfg)
            columns[key].append(fit.beta_hat)
            iterations += fit.iterations
            nonconverged += not fit.converged

    if nonconverged:
        logger.warning("%d of %d pinball fits hit the iteration cap", nonconverged, 3 * grid.L)

    return CoefficientSet(
        beta=np.column_stack(columns["beta"]),
        grid=grid,
        beta_plus=np.column_stack(columns["plus"]),
        beta_minus=np.column_stack(columns["minus"]),
        h=h,
        iterations=iterations,
        nonconverged=nonconverged,
    )
