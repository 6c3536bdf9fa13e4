"""FastMCP server exposing the estimator, simulations and self-tests."""

import asyncio
import logging

from mcp.server.fastmcp import FastMCP

from .cli import RunConfig, fit_rows, ingest_csv, json_rows
from .core import FitConfig, make_grid
from .estimator import asymptotic_inference, bootstrap_se, estimate
from .oracle import run_selftest
from .sim import FAST_REPLICATIONS, get_model, run_monte_carlo, true_coefficients

# Configure logging
logging.basicConfig(level=logging.INFO)
logger = logging.getLogger(__name__)

# Create FastMCP server
mcp = FastMCP("EffQR")

# Global config instance (initialized on first use)
_config: FitConfig | None = None


def get_config() -> FitConfig:
    """Get or create the fit configuration from EFFQR_* environment variables."""
    global _config
    if _config is None:
        _config = FitConfig.from_env()
        logger.info("Loaded configuration: %s", _config)
    return _config


def _levels(levels: list[float] | None) -> tuple[float, ...]:
    return tuple(levels) if levels else (0.5,)


# =============================================================================
# Estimation Tools
# =============================================================================


@mcp.tool()
async def effqr_fit(
    csv_path: str,
    covariates: list[str],
    response: str = "y",
    levels: list[float] | None = None,
    log_columns: list[str] | None = None,
    intercept: bool = True,
    se: str = "asymptotic",
    replications: int = 200,
) -> dict:
    """
    Estimate TQE, SEF and EFF coefficients from a CSV file.

    Args:
        csv_path: Path to a CSV file with a header row
        covariates: Covariate column names
        response: Response column name
        levels: Quantile levels (default [0.5])
        log_columns: Columns to log-transform before fitting
        intercept: Prepend an intercept column
        se: "asymptotic" (fast) or "bootstrap"
        replications: Bootstrap replications when se="bootstrap"

    Returns:
        Dictionary with one row per (level, coefficient, estimator) holding
        est, esd and p_value, plus run diagnostics. Undefined values
        (the classical fit's asymptotic esd and p_value) are None.
    """
    if se not in ("asymptotic", "bootstrap"):
        raise ValueError(f"Invalid se: {se}")
    cfg = get_config()
    config = RunConfig(
        subcommand="fit",
        response=response,
        covariates=tuple(covariates),
        log_columns=tuple(log_columns or ()),
        intercept=intercept,
        levels=_levels(levels),
        replications=replications,
        se=se,
    )
    grid = make_grid(config.levels)
    ingested = await asyncio.to_thread(ingest_csv, csv_path, config)

    if se == "bootstrap":
        result = await asyncio.to_thread(
            bootstrap_se, ingested.dataset, grid, cfg, replications, cfg.seed
        )
        report, est, esd, p_value = result.report, result.est, result.esd, result.p_value
    else:
        report = await asyncio.to_thread(estimate, ingested.dataset, grid, cfg)
        est, esd, p_value = asymptotic_inference(report)

    rows = fit_rows(grid.levels, ingested.column_names, est, esd, p_value)
    return {
        "rows": json_rows(rows),
        "rejected_rows": ingested.rejected_rows,
        "diagnostics": report.diagnostics.to_dict(),
    }


# =============================================================================
# Simulation Tools
# =============================================================================


@mcp.tool()
async def effqr_simulate(
    model: str,
    n: int = 1000,
    levels: list[float] | None = None,
    replications: int = FAST_REPLICATIONS,
    seed: int | None = None,
) -> dict:
    """
    Run a Monte Carlo comparison of TQE, SEF and EFF on a simulation design.

    Args:
        model: Design id, one of M1..M5
        n: Sample size per replication
        levels: Quantile levels (default [0.5, 0.7])
        replications: Number of replications
        seed: Master seed (default from EFFQR_SEED)

    Returns:
        Dictionary with true coefficients and per-estimator means and SDs
    """
    cfg = get_config()
    grid = make_grid(levels or (0.5, 0.7))
    summary = await asyncio.to_thread(
        run_monte_carlo, get_model(model), n, grid, replications, cfg, seed
    )
    return summary.to_dict()


@mcp.tool()
async def effqr_true_coefficients(model: str, levels: list[float]) -> dict:
    """
    Get the true (beta1, beta2) of a simulation design at the given levels.

    Args:
        model: Design id, one of M1..M5
        levels: Quantile levels

    Returns:
        Dictionary with the model description and a beta1/beta2 list per level
    """
    design = get_model(model)
    values = true_coefficients(design, levels)
    return {
        "model": design.id,
        "description": design.description,
        "levels": list(levels),
        "beta1": values[0].tolist(),
        "beta2": values[1].tolist(),
    }


# =============================================================================
# Diagnostics Tools
# =============================================================================


@mcp.tool()
async def effqr_selftest(seed: int = 0) -> list[dict]:
    """
    Run the built-in oracle checks.

    Args:
        seed: Seed for the random instances

    Returns:
        List of reports with check name, discrepancy, tolerance and pass flag
    """
    reports = await asyncio.to_thread(run_selftest, seed)
    return [report.__dict__ for report in reports]


# =============================================================================
# Server Entry Point
# =============================================================================


def main():
    """Run the MCP server."""
    mcp.run()


if __name__ == "__main__":
    main()
