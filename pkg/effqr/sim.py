"""Simulation designs M1-M5 and the Monte Carlo comparison harness.

Every design is a linear quantile model Q(tau | x) = x1 beta1(tau) + x2 beta2(tau)
with positive covariates, so drawing u ~ U(0, 1) and returning the
tau = u quantile produces a response with exactly those conditional quantiles.
"""

import json
import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from joblib import Parallel, delayed
from scipy.special import logit
from scipy.stats import norm

from .core import Dataset, FitConfig, QuantileGrid, make_dataset, make_grid
from .errors import DataError, EffQRError, ReplicationError, UnknownModelError, UsageError, stage
from .estimator import ESTIMATORS, estimate

logger = logging.getLogger(__name__)

DEFAULT_REPLICATIONS = 1000
FAST_REPLICATIONS = 200

# Fraction of Monte Carlo replicates allowed to fail before aborting
MAX_SIMULATION_FAILURE_RATE = 0.02

# Uniform draws this close to 0 or 1 are redrawn
EDGE_EPSILON = 1e-12


# =============================================================================
# Models
# =============================================================================


def _tan_component(tau):
    return np.tan(np.pi * (np.asarray(tau, dtype=float) - 0.5))


def _tan_slope(tau):
    return np.pi / np.cos(np.pi * (np.asarray(tau, dtype=float) - 0.5)) ** 2


def _normal_slope(tau):
    return 1.0 / norm.pdf(norm.ppf(tau))


def _logit_slope(tau):
    tau = np.asarray(tau, dtype=float)
    return 1.0 / (tau * (1.0 - tau))


def _constant(value: float) -> Callable:
    return lambda tau: np.full_like(np.asarray(tau, dtype=float), value)


@dataclass(frozen=True)
class SimModel:
    """
    One simulation design.

    Attributes:
        id: Model id (M1..M5)
        beta1: tau -> beta1(tau)
        beta2: tau -> beta2(tau)
        dbeta1: tau -> d beta1 / d tau
        dbeta2: tau -> d beta2 / d tau
        x1_lognormal: x1 is log-normal (else constant 1)
        description: Closed forms, for listings
    """

    id: str
    beta1: Callable
    beta2: Callable
    dbeta1: Callable
    dbeta2: Callable
    x1_lognormal: bool
    description: str

    def beta(self, tau) -> np.ndarray:
        """Coefficients at ``tau`` as an array with a leading axis of 2."""
        return np.stack([self.beta1(tau), self.beta2(tau)])

    def dbeta(self, tau) -> np.ndarray:
        return np.stack([self.dbeta1(tau), self.dbeta2(tau)])


MODELS: dict[str, SimModel] = {
    "M1": SimModel(
        id="M1",
        beta1=_constant(2.0),
        beta2=lambda tau: 1.0 + norm.ppf(tau),
        dbeta1=_constant(0.0),
        dbeta2=_normal_slope,
        x1_lognormal=False,
        description="beta1 = 2, beta2 = 1 + Phi^-1(tau), x1 = 1",
    ),
    "M2": SimModel(
        id="M2",
        beta1=lambda tau: 2.0 + norm.ppf(tau),
        beta2=lambda tau: 2.0 + norm.ppf(tau),
        dbeta1=_normal_slope,
        dbeta2=_normal_slope,
        x1_lognormal=True,
        description="beta1 = beta2 = 2 + Phi^-1(tau), x1 log-normal",
    ),
    "M3": SimModel(
        id="M3",
        beta1=_constant(2.0),
        beta2=lambda tau: 1.0 + logit(tau),
        dbeta1=_constant(0.0),
        dbeta2=_logit_slope,
        x1_lognormal=False,
        description="beta1 = 2, beta2 = 1 + log(tau / (1 - tau)), x1 = 1",
    ),
    "M4": SimModel(
        id="M4",
        beta1=_constant(2.0),
        beta2=lambda tau: 1.0 + _tan_component(tau),
        dbeta1=_constant(0.0),
        dbeta2=_tan_slope,
        x1_lognormal=False,
        description="beta1 = 2, beta2 = 1 + tan(pi (tau - 0.5)), x1 = 1",
    ),
    "M5": SimModel(
        id="M5",
        beta1=lambda tau: 1.0 + logit(tau),
        beta2=lambda tau: 2.0 + _tan_component(tau),
        dbeta1=_logit_slope,
        dbeta2=_tan_slope,
        x1_lognormal=True,
        description="beta1 = 1 + log(tau / (1 - tau)), beta2 = 2 + tan(pi (tau - 0.5)), x1 log-normal",
    ),
}


def get_model(model_id: str) -> SimModel:
    """Look up a model by id (case-insensitive)."""
    model = MODELS.get(str(model_id).upper())
    if model is None:
        raise UnknownModelError(f"Unknown model {model_id!r}; expected one of {sorted(MODELS)}")
    return model


def true_coefficients(model: SimModel | str, levels) -> np.ndarray:
    """True (beta1, beta2) at each level, shape 2 x L."""
    model = get_model(model) if isinstance(model, str) else model
    grid = make_grid(levels)
    return model.beta(np.asarray(grid.levels))


# =============================================================================
# Data generation
# =============================================================================


def draw_covariates(
    model: SimModel, n: int, rng: np.random.Generator, lognormal_sigma: float = 1.0
) -> np.ndarray:
    """n x 2 design: x1 constant 1 or log-normal, x2 log-normal."""
    x2 = rng.lognormal(mean=0.0, sigma=lognormal_sigma, size=n)
    if model.x1_lognormal:
        x1 = rng.lognormal(mean=0.0, sigma=lognormal_sigma, size=n)
    else:
        x1 = np.ones(n)
    return np.column_stack([x1, x2])


def quantile_response(model: SimModel, x: np.ndarray, u) -> np.ndarray:
    """Evaluate the conditional quantile x1 beta1(u) + x2 beta2(u) row by row."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    beta = model.beta(np.asarray(u, dtype=float))
    return x[:, 0] * beta[0] + x[:, 1] * beta[1]


def _uniform_interior(rng: np.random.Generator, n: int) -> np.ndarray:
    u = rng.uniform(size=n)
    edge = (u < EDGE_EPSILON) | (u > 1.0 - EDGE_EPSILON)
    while edge.any():
        u[edge] = rng.uniform(size=int(edge.sum()))
        edge = (u < EDGE_EPSILON) | (u > 1.0 - EDGE_EPSILON)
    return u


def generate(
    model: SimModel | str,
    n: int,
    seed=None,
    lognormal_sigma: float = 1.0,
) -> Dataset:
    """
    Draw a sample of size n from a simulation design.

    Args:
        model: SimModel or id
        n: Sample size (>= 1)
        seed: Anything accepted by numpy.random.default_rng
        lognormal_sigma: Log-scale SD of the log-normal covariates

    Returns:
        Dataset with columns (x1, x2)
    """
    model = get_model(model) if isinstance(model, str) else model
    if n < 1:
        raise DataError(f"Sample size must be >= 1, got {n}")
    rng = np.random.default_rng(seed)
    x = draw_covariates(model, n, rng, lognormal_sigma)
    u = _uniform_interior(rng, n)
    return make_dataset(quantile_response(model, x, u), x)


# =============================================================================
# Monte Carlo
# =============================================================================


@dataclass(frozen=True, eq=False)
class MonteCarloSummary:
    """
    Means and SDs of TQE / SEF / EFF over replications.

    ``mean`` and ``sd`` map estimator name to a 2 x L array (coefficient x level).
    """

    model_id: str
    n: int
    grid: QuantileGrid
    replications: int
    failures: int
    seed: int
    truth: np.ndarray
    mean: dict[str, np.ndarray]
    sd: dict[str, np.ndarray]
    draws: np.ndarray = field(repr=False)

    def ratio(self, numerator: str, denominator: str) -> np.ndarray:
        """Elementwise SD ratio, e.g. ratio("TQE", "EFF")."""
        return self.sd[numerator] / self.sd[denominator]

    def to_tsv(self) -> str:
        """Table layout: a True row, then one row per estimator with mean(SD) cells."""
        header = ["model", "n", "estimator"]
        for tau in self.grid.levels:
            header += [f"beta1({tau:g})", f"beta2({tau:g})"]
        lines = ["\t".join(header)]

        truth = [f"{v:.4f}" for v in self.truth.T.ravel()]
        lines.append("\t".join([self.model_id, str(self.n), "True", *truth]))
        for name in ESTIMATORS:
            cells = [
                f"{m:.4f}({s:.4f})"
                for m, s in zip(self.mean[name].T.ravel(), self.sd[name].T.ravel())
            ]
            lines.append("\t".join([self.model_id, str(self.n), name, *cells]))
        return "\n".join(lines) + "\n"

    def to_dict(self) -> dict:
        return {
            "model": self.model_id,
            "n": self.n,
            "levels": list(self.grid.levels),
            "replications": self.replications,
            "failures": self.failures,
            "seed": self.seed,
            "truth": self.truth.tolist(),
            "mean": {k: v.tolist() for k, v in self.mean.items()},
            "sd": {k: v.tolist() for k, v in self.sd.items()},
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


def _simulate_once(model, n, grid, cfg, seed, lognormal_sigma) -> np.ndarray | None:
    data = generate(model, n, seed, lognormal_sigma)
    try:
        return estimate(data, grid, cfg).stacked()
    except EffQRError as exc:
        logger.info("Monte Carlo replicate skipped: %s", exc)
        return None


def run_monte_carlo(
    model: SimModel | str,
    n: int,
    grid: QuantileGrid,
    replications: int = DEFAULT_REPLICATIONS,
    cfg: FitConfig | None = None,
    seed: int | None = None,
    lognormal_sigma: float = 1.0,
) -> MonteCarloSummary:
    """
    Repeat generate + estimate and summarize each estimator.

    Replicate r draws from child r of ``SeedSequence(seed)``, so the summary
    is the same for any n_jobs.

    Args:
        model: SimModel or id
        n: Sample size per replicate
        grid: Quantile levels
        replications: Replicate count (>= 2)
        cfg: Fit configuration (n_jobs controls parallelism)
        seed: Master seed; defaults to cfg.seed
        lognormal_sigma: Log-scale SD of the log-normal covariates

    Returns:
        MonteCarloSummary

    Raises:
        ReplicationError: More than 2% of replicates failed
    """
    model = get_model(model) if isinstance(model, str) else model
    cfg = cfg or FitConfig()
    if replications < 2:
        raise DataError(f"Monte Carlo needs at least 2 replications, got {replications}")
    seed = cfg.seed if seed is None else seed

    children = np.random.SeedSequence(seed).spawn(replications)
    with stage("simulate"):
        results = Parallel(n_jobs=cfg.n_jobs)(
            delayed(_simulate_once)(model, n, grid, cfg, child, lognormal_sigma)
            for child in children
        )
        draws = [r for r in results if r is not None]
        failures = replications - len(draws)
        if failures > MAX_SIMULATION_FAILURE_RATE * replications or len(draws) < 2:
            raise ReplicationError(
                f"{failures} of {replications} Monte Carlo replicates failed"
            )
    if failures:
        logger.warning("%d of %d Monte Carlo replicates skipped", failures, replications)

    draws = np.stack(draws)
    means = draws.mean(axis=0)
    sds = draws.std(axis=0, ddof=1)
    logger.info("%s n=%d: %d replicates summarized", model.id, n, len(draws))
    return MonteCarloSummary(
        model_id=model.id,
        n=n,
        grid=grid,
        replications=replications,
        failures=failures,
        seed=seed,
        truth=model.beta(np.asarray(grid.levels)),
        mean=dict(zip(ESTIMATORS, means)),
        sd=dict(zip(ESTIMATORS, sds)),
        draws=draws,
    )


# =============================================================================
# Plain-text run configuration
# =============================================================================


@dataclass(frozen=True)
class SimConfig:
    """One simulation run as read from a ``key = value`` file."""

    model: str
    n: int
    levels: tuple[float, ...]
    replications: int = DEFAULT_REPLICATIONS
    seed: int | None = None
    lognormal_sigma: float = 1.0
    fast: bool = False

    @property
    def effective_replications(self) -> int:
        if self.fast:
            return min(self.replications, FAST_REPLICATIONS)
        return self.replications


_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def _parse_bool(key: str, value: str) -> bool:
    lowered = value.lower()
    if lowered in _TRUE:
        return True
    if lowered in _FALSE:
        return False
    raise UsageError(f"{key} must be a boolean, got {value!r}")


def parse_sim_config(text: str) -> SimConfig:
    """
    Parse a simulation config.

    Recognized keys: model, n, levels (comma separated), replications, seed,
    lognormal_sigma, fast. Blank lines and ``#`` comments are ignored.

    Raises:
        UsageError: Malformed line, unknown or missing key, bad value
    """
    values: dict[str, str] = {}
    for number, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise UsageError(f"Line {number}: expected 'key = value', got {raw!r}")
        key = key.strip().lower()
        if key not in SimConfig.__dataclass_fields__:
            raise UsageError(f"Line {number}: unknown key {key!r}")
        values[key] = value.strip()

    for required in ("model", "n", "levels"):
        if required not in values:
            raise UsageError(f"Simulation config is missing {required!r}")

    try:
        config = SimConfig(
            model=values["model"].upper(),
            n=int(values["n"]),
            levels=tuple(float(v) for v in values["levels"].split(",") if v.strip()),
            replications=int(values.get("replications", DEFAULT_REPLICATIONS)),
            seed=int(values["seed"]) if "seed" in values else None,
            lognormal_sigma=float(values.get("lognormal_sigma", 1.0)),
            fast=_parse_bool("fast", values["fast"]) if "fast" in values else False,
        )
    except ValueError as exc:
        raise UsageError(f"Invalid simulation config value: {exc}") from None
    return config
