"""Information matrices, optimal directions and the efficient score.

Directions are stacked level by level: d = (d(tau_1), ..., d(tau_L)), so the
target (level k, coefficient j) sits at flat index m = k * p + j.
"""

import logging
from dataclasses import dataclass

import numpy as np
from scipy.linalg import LinAlgError, block_diag, cho_factor, cho_solve

from .core import CoefficientSet, Dataset, QuantileGrid
from .density import DensityEstimates
from .errors import DimensionError, NotPositiveDefiniteError

logger = logging.getLogger(__name__)


def flat_index(k: int, j: int, p: int) -> int:
    """Position of (level k, coefficient j) in the stacked direction."""
    return k * p + j


def _weighted_gram(x: np.ndarray, fa: np.ndarray, fb: np.ndarray) -> np.ndarray:
    """Sample average of fa * fb * x x'."""
    return (x * (fa * fb)[:, None]).T @ x / x.shape[0]


# =============================================================================
# Matrix assembly
# =============================================================================


def assemble_A(data: Dataset, dens: DensityEstimates, grid: QuantileGrid) -> np.ndarray:
    """
    Block-diagonal 2pL x 2pL matrix of interval information terms.

    Block 1 is E(f_1^2 xx')/tau_1, interior blocks pair adjacent levels over
    the interval (tau_{l-1}, tau_l), and the last block is E(f_L^2 xx')/(1 - tau_L).
    """
    x, f = data.x, dens.f_hat
    spacings = grid.spacings
    L = grid.L

    blocks = [_weighted_gram(x, f[:, 0], f[:, 0]) / spacings[0]]
    for l in range(1, L):
        g_aa = _weighted_gram(x, f[:, l - 1], f[:, l - 1])
        g_ab = _weighted_gram(x, f[:, l - 1], f[:, l])
        g_bb = _weighted_gram(x, f[:, l], f[:, l])
        blocks.append(np.block([[g_aa, -g_ab], [-g_ab.T, g_bb]]) / spacings[l])
    blocks.append(_weighted_gram(x, f[:, L - 1], f[:, L - 1]) / spacings[L])
    return block_diag(*blocks)


def assemble_B(p: int, L: int) -> np.ndarray:
    """pL x 2pL selector: d(tau_l) enters column blocks 2l and 2l + 1."""
    if p < 1 or L < 1:
        raise DimensionError(f"Need p >= 1 and L >= 1, got p={p}, L={L}")
    B = np.zeros((p * L, 2 * p * L))
    eye = np.eye(p)
    for l in range(L):
        rows = slice(l * p, (l + 1) * p)
        B[rows, 2 * l * p : (2 * l + 1) * p] = eye
        B[rows, (2 * l + 1) * p : (2 * l + 2) * p] = eye
    return B


def assemble_U(data: Dataset, dens: DensityEstimates, grid: QuantileGrid) -> np.ndarray:
    """
    Block-tridiagonal pL x pL information matrix, equal to B A B'.

    U_ll = E(f_l^2 xx') (1/(tau_l - tau_{l-1}) + 1/(tau_{l+1} - tau_l))
    U_l,l+1 = -E(f_l f_{l+1} xx') / (tau_{l+1} - tau_l)
    """
    x, f = data.x, dens.f_hat
    p, L = data.p, grid.L
    spacings = grid.spacings
    U = np.zeros((p * L, p * L))
    for l in range(L):
        diag = slice(l * p, (l + 1) * p)
        U[diag, diag] = _weighted_gram(x, f[:, l], f[:, l]) * (
            1.0 / spacings[l] + 1.0 / spacings[l + 1]
        )
        if l + 1 < L:
            upper = slice((l + 1) * p, (l + 2) * p)
            cross = -_weighted_gram(x, f[:, l], f[:, l + 1]) / spacings[l + 1]
            U[diag, upper] = cross
            U[upper, diag] = cross.T
    return U


def assemble_single_U(data: Dataset, dens: DensityEstimates, grid: QuantileGrid) -> np.ndarray:
    """Block-diagonal information for the per-level score, E(f_l^2 xx')/(tau(1-tau))."""
    blocks = [
        _weighted_gram(data.x, dens.f_hat[:, l], dens.f_hat[:, l]) / (tau * (1.0 - tau))
        for l, tau in enumerate(grid.levels)
    ]
    return block_diag(*blocks)


# =============================================================================
# Directions
# =============================================================================


@dataclass(frozen=True, eq=False)
class ScoreSystem:
    """
    Solved information system.

    Attributes:
        U: pL x pL information matrix
        U_inv: Its inverse
        W: Diagonal matrix with entries 1 / diag(U_inv)
        directions: Column m is the optimal direction u_m for target m
        sigma2: Variance bounds, sigma2[m] = 1 / (u_m' U u_m)
        p: Covariate count
        L: Grid length
    """

    U: np.ndarray
    U_inv: np.ndarray
    W: np.ndarray
    directions: np.ndarray
    sigma2: np.ndarray
    p: int
    L: int

    def direction(self, k: int, j: int) -> np.ndarray:
        return self.directions[:, flat_index(k, j, self.p)]

    def bound(self, k: int, j: int) -> float:
        return float(self.sigma2[flat_index(k, j, self.p)])


def _inverse_spd(U: np.ndarray) -> np.ndarray:
    if U.ndim != 2 or U.shape[0] != U.shape[1]:
        raise DimensionError(f"U must be square, got shape {U.shape}")
    try:
        factor = cho_factor(U, lower=True)
    except LinAlgError:
        smallest = float(np.linalg.eigvalsh((U + U.T) / 2.0).min())
        raise NotPositiveDefiniteError(
            f"Information matrix is not positive definite (smallest eigenvalue {smallest:.3e})",
            min_eigenvalue=smallest,
        ) from None
    inverse = cho_solve(factor, np.eye(U.shape[0]))
    return (inverse + inverse.T) / 2.0


def solve_directions(U: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """
    Minimize d'Ud subject to d_m = 1, for every m at once.

    The Lagrange solution is u_m = U^{-1} e_m / U^{-1}_mm, i.e. the columns
    of U^{-1} W.

    Args:
        U: Symmetric positive-definite matrix

    Returns:
        (directions, sigma2) with directions[:, m] = u_m

    Raises:
        NotPositiveDefiniteError: Cholesky factorization failed
    """
    U = np.asarray(U, dtype=float)
    U_inv = _inverse_spd(U)
    W = np.diag(1.0 / np.diag(U_inv))
    directions = U_inv @ W
    sigma2 = 1.0 / np.einsum("im,ij,jm->m", directions, U, directions)
    return directions, sigma2


def _system(U: np.ndarray, p: int, L: int) -> ScoreSystem:
    directions, sigma2 = solve_directions(U)
    U_inv = _inverse_spd(U)
    return ScoreSystem(
        U=U,
        U_inv=U_inv,
        W=np.diag(1.0 / np.diag(U_inv)),
        directions=directions,
        sigma2=sigma2,
        p=p,
        L=L,
    )


def build_score_system(data: Dataset, dens: DensityEstimates, grid: QuantileGrid) -> ScoreSystem:
    """Assemble U for the multi-level score and solve for all directions."""
    return _system(assemble_U(data, dens, grid), data.p, grid.L)


def build_single_quantile_system(
    data: Dataset, dens: DensityEstimates, grid: QuantileGrid
) -> ScoreSystem:
    """Per-level system that ignores the other quantiles."""
    return _system(assemble_single_U(data, dens, grid), data.p, grid.L)


# =============================================================================
# Scores
# =============================================================================


def level_coupling(grid: QuantileGrid) -> np.ndarray:
    """
    L x L tridiagonal coupling of adjacent levels.

    Diagonal 1/(tau_l - tau_{l-1}) + 1/(tau_{l+1} - tau_l), off-diagonal
    -1/(tau_{l+1} - tau_l), with tau_0 = 0 and tau_{L+1} = 1.
    """
    spacings = grid.spacings
    inner = 1.0 / spacings[1:-1]
    return np.diag(1.0 / spacings[:-1] + 1.0 / spacings[1:]) - np.diag(inner, 1) - np.diag(inner, -1)


def efficient_score(
    y: float,
    x: np.ndarray,
    coeffs: CoefficientSet,
    dens_row: np.ndarray,
    direction: np.ndarray,
) -> float:
    """
    Multi-level efficient score at a single observation.

    S = sum_{l=1}^{L+1} (a_{l-1} - a_l) / (tau_l - tau_{l-1})
          * (I{b_{l-1} <= y < b_l} - (tau_l - tau_{l-1}))

    with a_l = f_l x'd(tau_l), a_0 = a_{L+1} = 0 and interval boundaries
    b_l = x'beta(tau_l) (b_0 = -inf, b_{L+1} = +inf). It is evaluated level
    by level as sum_l (T a)_l (tau_l - I{y < b_l}) with T from
    :func:`level_coupling`, which equals the interval form whenever the
    boundaries are ordered and keeps each level's own indicator when they
    cross. A y on a boundary counts as above it.

    Args:
        y: Response
        x: Covariate vector (length p)
        coeffs: Grid coefficients
        dens_row: Densities f_l at x (length L)
        direction: Stacked direction d (length pL)

    Returns:
        Score value
    """
    x = np.asarray(x, dtype=float)
    p, L = coeffs.p, coeffs.grid.L
    d = np.asarray(direction, dtype=float).reshape(L, p)

    a = np.asarray(dens_row, dtype=float) * (d @ x)
    residual = np.asarray(coeffs.grid.levels) - (y < x @ coeffs.beta)
    return float(residual @ level_coupling(coeffs.grid) @ a)


def single_quantile_score(
    y: float,
    x: np.ndarray,
    beta_tau: np.ndarray,
    f_hat: float,
    tau: float,
    direction: np.ndarray,
) -> float:
    """Classical efficient score at one level: f (tau - I{y < x'beta}) d'x / (tau(1-tau))."""
    x = np.asarray(x, dtype=float)
    below = float(y < x @ beta_tau)
    return float(f_hat * (tau - below) * (np.asarray(direction) @ x) / (tau * (1.0 - tau)))


def score_matrix(
    data: Dataset, coeffs: CoefficientSet, dens: DensityEstimates
) -> tuple[np.ndarray, int]:
    """
    Score components for every observation.

    Returns Psi (n x pL) with S_m(y_i, x_i) = Psi[i] @ u_m for any stacked
    direction u_m, and the number of observations whose fitted boundaries
    cross (x_i'beta(tau_l) not increasing in l). Crossed boundaries are
    counted, not reordered.
    """
    x, y = data.x, data.y
    p, L = data.p, coeffs.grid.L

    boundaries = x @ coeffs.beta
    crossings = int(np.any(np.diff(boundaries, axis=1) < 0, axis=1).sum())
    if crossings:
        logger.warning("Fitted quantile boundaries cross at %d of %d observations", crossings, data.n)

    residual = np.asarray(coeffs.grid.levels) - (y[:, None] < boundaries)
    weight = residual @ level_coupling(coeffs.grid)
    psi = (dens.f_hat * weight)[:, :, None] * x[:, None, :]
    return psi.reshape(data.n, L * p), crossings


def single_score_matrix(
    data: Dataset, coeffs: CoefficientSet, dens: DensityEstimates
) -> np.ndarray:
    """Per-level classical score components, n x pL in the stacked layout."""
    tau = np.asarray(coeffs.grid.levels)
    below = data.y[:, None] < data.x @ coeffs.beta
    weight = dens.f_hat * (tau - below) / (tau * (1.0 - tau))
    psi = weight[:, :, None] * data.x[:, None, :]
    return psi.reshape(data.n, coeffs.grid.L * data.p)
