"""Batch command line: fit a CSV, run a simulation design, or self-test."""

import argparse
import json
import logging
import math
import os
import re
import sys
import tempfile
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np
import pandas as pd

from .core import Dataset, FitConfig, make_dataset, make_grid
from .errors import (
    EXIT_NUMERICAL,
    EXIT_OK,
    DataError,
    EffQRError,
    EmptyDataError,
    MissingColumnError,
    ParseError,
    UsageError,
    stage,
)
from .estimator import ESTIMATORS, asymptotic_inference, bootstrap_se, estimate
from .oracle import run_selftest
from .sim import (
    DEFAULT_REPLICATIONS,
    SimConfig,
    get_model,
    parse_sim_config,
    run_monte_carlo,
)

logger = logging.getLogger(__name__)

INTERCEPT = "Intercept"
NAN_TOKENS = {"nan", "+nan", "-nan", "inf", "+inf", "-inf", "infinity", "+infinity", "-infinity"}


# =============================================================================
# Run configuration
# =============================================================================


@dataclass(frozen=True)
class RunConfig:
    """
    One CLI invocation, validated.

    Fields not used by a subcommand keep their defaults.
    """

    subcommand: str
    input_path: Path | None = None
    response: str = "y"
    covariates: tuple[str, ...] = ()
    log_columns: tuple[str, ...] = ()
    intercept: bool = True
    levels: tuple[float, ...] = (0.5,)
    bandwidth: float | None = None
    replications: int = DEFAULT_REPLICATIONS
    se: str = "bootstrap"
    seed: int | None = None
    jobs: int | None = None
    output: Path | None = None
    fmt: str = "tsv"
    sim: SimConfig | None = None

    def fit_config(self) -> FitConfig:
        """FitConfig from EFFQR_* variables with command-line overrides."""
        try:
            return FitConfig.from_env(bandwidth=self.bandwidth, seed=self.seed, n_jobs=self.jobs)
        except ValueError as exc:
            raise UsageError(f"Invalid configuration: {exc}") from None


def _split(value: str | None) -> tuple[str, ...]:
    if not value:
        return ()
    return tuple(part.strip() for part in value.split(",") if part.strip())


def _levels(value: str) -> tuple[float, ...]:
    try:
        return tuple(float(v) for v in _split(value))
    except ValueError:
        raise UsageError(f"Levels must be comma-separated numbers, got {value!r}") from None


def config_from_args(args: argparse.Namespace) -> RunConfig:
    """Translate parsed arguments into a RunConfig."""
    common = {
        "subcommand": args.command,
        "seed": args.seed,
        "jobs": getattr(args, "jobs", None),
        "output": Path(args.output) if args.output else None,
        "fmt": args.format,
    }
    if args.command == "fit":
        covariates = _split(args.covariates)
        if not covariates:
            raise UsageError("fit needs at least one covariate (--covariates)")
        log_columns = _split(args.log)
        if log_columns == ("all",):
            log_columns = (args.response, *covariates)
        unknown = set(log_columns) - {args.response, *covariates}
        if unknown:
            raise UsageError(f"--log names columns that are not selected: {sorted(unknown)}")
        return RunConfig(
            input_path=Path(args.input),
            response=args.response,
            covariates=covariates,
            log_columns=log_columns,
            intercept=args.intercept,
            levels=_levels(args.levels),
            bandwidth=args.bandwidth,
            replications=args.replications,
            se=args.se,
            **common,
        )

    if args.command == "simulate":
        if args.config:
            try:
                text = Path(args.config).read_text(encoding="utf-8")
            except OSError as exc:
                raise UsageError(f"Cannot read simulation config: {exc}") from None
            sim = parse_sim_config(text)
        else:
            missing = [flag for flag, value in (("--model", args.model), ("--n", args.n)) if value is None]
            if missing:
                raise UsageError(f"simulate needs --config or {' and '.join(missing)}")
            sim = SimConfig(model=args.model.upper(), n=args.n, levels=(0.5, 0.7))
        overrides = {
            "model": args.model.upper() if args.model else None,
            "n": args.n,
            "levels": _levels(args.levels) if args.levels else None,
            "replications": args.replications,
            "seed": args.seed,
            "lognormal_sigma": args.lognormal_sigma,
            "fast": True if args.fast else None,
        }
        sim = replace(sim, **{k: v for k, v in overrides.items() if v is not None})
        return RunConfig(sim=sim, **common)

    return RunConfig(**common)


# =============================================================================
# CSV ingestion
# =============================================================================


@dataclass(frozen=True, eq=False)
class IngestResult:
    dataset: Dataset
    column_names: tuple[str, ...]
    rejected_rows: int


def _numeric_column(frame: pd.DataFrame, column: str) -> np.ndarray:
    text = frame[column].astype(str).str.strip()
    values = pd.to_numeric(text, errors="coerce")
    bad = values.isna() & ~text.str.lower().isin(NAN_TOKENS)
    if bad.any():
        position = int(np.flatnonzero(bad.to_numpy())[0])
        line = position + 2
        raise ParseError(
            f"Cannot parse {text.iloc[position]!r} as a number (line {line}, column {column!r})",
            line=line,
            column=column,
        )
    return values.to_numpy(dtype=float)


def ingest_csv(path: str | Path, config: RunConfig) -> IngestResult:
    """
    Read the response and covariates from a CSV file.

    Rows with a non-finite value, or a non-positive value in a log-transformed
    column, are dropped and counted. Flagged columns are replaced by their
    natural log, and an intercept column is prepended when configured.

    Args:
        path: CSV with a header row
        config: Column selection, log flags and intercept setting

    Returns:
        IngestResult with the Dataset and covariate names

    Raises:
        MissingColumnError: A selected column is not in the header
        ParseError: A cell is not a number, or a row has the wrong field count
        EmptyDataError: No rows remain
        DataError: The file is missing or not valid UTF-8
    """
    with stage("ingest"):
        return _ingest(Path(path), config)


def _read_frame(path: Path) -> pd.DataFrame:
    try:
        return pd.read_csv(path, dtype=str, keep_default_na=False, encoding="utf-8")
    except FileNotFoundError:
        raise DataError(f"Input file not found: {path}") from None
    except pd.errors.EmptyDataError:
        raise EmptyDataError(f"Input file is empty: {path}") from None
    except pd.errors.ParserError as exc:
        detail = str(exc).strip()
        match = re.search(r"line (\d+)", detail)
        raise ParseError(
            f"Malformed CSV {path}: {detail}",
            line=int(match.group(1)) if match else 0,
            column="",
        ) from None
    except UnicodeDecodeError as exc:
        raise DataError(f"Input file {path} is not valid UTF-8 (byte {exc.start})") from None


def _ingest(path: Path, config: RunConfig) -> IngestResult:
    frame = _read_frame(path)
    frame.columns = [str(c).strip() for c in frame.columns]

    columns = (config.response, *config.covariates)
    for column in columns:
        if column not in frame.columns:
            raise MissingColumnError(column)

    if frame.empty:
        raise EmptyDataError(f"No data rows in {path}")
    table = np.column_stack([_numeric_column(frame, c) for c in columns])
    keep = np.isfinite(table).all(axis=1)
    for position, column in enumerate(columns):
        if column in config.log_columns:
            keep &= table[:, position] > 0

    rejected = int((~keep).sum())
    if rejected:
        logger.info("Rejected %d of %d rows (non-finite or outside the log domain)", rejected, len(table))
    table = table[keep]
    if table.shape[0] < 2:
        raise EmptyDataError(f"Need at least 2 usable rows in {path}, got {table.shape[0]}")

    for position, column in enumerate(columns):
        if column in config.log_columns:
            table[:, position] = np.log(table[:, position])

    y, x = table[:, 0], table[:, 1:]
    names = tuple(config.covariates)
    if config.intercept:
        x = np.column_stack([np.ones(x.shape[0]), x])
        names = (INTERCEPT, *names)
    return IngestResult(dataset=make_dataset(y, x), column_names=names, rejected_rows=rejected)


# =============================================================================
# Output
# =============================================================================


def write_atomic(path: Path | None, text: str) -> None:
    """Write ``text`` to ``path`` via a temporary file, or to stdout when path is None."""
    if path is None:
        sys.stdout.write(text)
        sys.stdout.flush()
        return
    path = Path(path)
    directory = path.parent if str(path.parent) else Path(".")
    handle = tempfile.NamedTemporaryFile(
        "w", encoding="utf-8", dir=directory, prefix=f".{path.name}.", delete=False, newline=""
    )
    try:
        with handle:
            handle.write(text)
        os.replace(handle.name, path)
    except BaseException:
        Path(handle.name).unlink(missing_ok=True)
        raise


def _fixed(value: float) -> str:
    return "NA" if not math.isfinite(value) else f"{value:.4f}"


def _json_number(value: float) -> float | None:
    return float(value) if math.isfinite(value) else None


def fit_rows(levels, names, est, esd, p_value) -> list[dict]:
    rows = []
    for k, tau in enumerate(levels):
        for j, name in enumerate(names):
            for e, estimator in enumerate(ESTIMATORS):
                rows.append(
                    {
                        "level": tau,
                        "coefficient": name,
                        "estimator": estimator,
                        "est": float(est[e, j, k]),
                        "esd": float(esd[e, j, k]),
                        "p_value": float(p_value[e, j, k]),
                    }
                )
    return rows


def json_rows(rows: list[dict]) -> list[dict]:
    """Copy of ``rows`` with non-finite numbers replaced by None."""
    return [{**row, **{k: _json_number(row[k]) for k in ("est", "esd", "p_value")}} for row in rows]


def format_fit(rows: list[dict], fmt: str, meta: dict) -> str:
    if fmt == "json":
        payload = {**meta, "rows": json_rows(rows)}
        return json.dumps(payload, indent=2, sort_keys=True) + "\n"
    lines = ["level\tcoefficient\testimator\tEst\tEsd\tp_value"]
    for row in rows:
        lines.append(
            "\t".join(
                [
                    f"{row['level']:g}",
                    row["coefficient"],
                    row["estimator"],
                    _fixed(row["est"]),
                    _fixed(row["esd"]),
                    _fixed(row["p_value"]),
                ]
            )
        )
    return "\n".join(lines) + "\n"


# =============================================================================
# Subcommands
# =============================================================================


def run_fit(config: RunConfig) -> int:
    """
    Estimate TQE / SEF / EFF on a CSV and write Est, Esd and p-values.

    Returns:
        Exit code (0 on success). Errors propagate as EffQRError.
    """
    cfg = config.fit_config()
    grid = make_grid(config.levels)
    ingested = ingest_csv(config.input_path, config)
    data = ingested.dataset
    logger.info("Loaded %d rows, %d covariates", data.n, data.p)

    if config.se == "bootstrap":
        result = bootstrap_se(data, grid, cfg, config.replications, cfg.seed)
        report, est, esd, pv = result.report, result.est, result.esd, result.p_value
    else:
        report = estimate(data, grid, cfg)
        est, esd, pv = asymptotic_inference(report)

    meta = {
        "levels": list(grid.levels),
        "coefficients": list(ingested.column_names),
        "se_method": config.se,
        "replications": config.replications if config.se == "bootstrap" else 0,
        "seed": cfg.seed,
        "rejected_rows": ingested.rejected_rows,
        "diagnostics": report.diagnostics.to_dict(),
    }
    rows = fit_rows(grid.levels, ingested.column_names, est, esd, pv)
    write_atomic(config.output, format_fit(rows, config.fmt, meta))
    return EXIT_OK


def run_simulate(config: RunConfig) -> int:
    """Run one Monte Carlo design and write its Table-1 style summary."""
    sim = config.sim
    model = get_model(sim.model)
    cfg = config.fit_config()
    grid = make_grid(sim.levels)
    seed = sim.seed if sim.seed is not None else cfg.seed
    summary = run_monte_carlo(
        model,
        sim.n,
        grid,
        replications=sim.effective_replications,
        cfg=cfg,
        seed=seed,
        lognormal_sigma=sim.lognormal_sigma,
    )
    text = summary.to_json() if config.fmt == "json" else summary.to_tsv()
    write_atomic(config.output, text)
    return EXIT_OK


def run_selftest_command(config: RunConfig) -> int:
    """Run every oracle; exit 3 if any check fails."""
    seed = config.seed if config.seed is not None else config.fit_config().seed
    reports = run_selftest(seed)
    if config.fmt == "json":
        text = json.dumps([r.__dict__ for r in reports], indent=2, sort_keys=True) + "\n"
    else:
        lines = ["check\tinstance\tdiscrepancy\ttolerance\tstatus"]
        lines += ["\t".join(r.to_row()) for r in reports]
        text = "\n".join(lines) + "\n"
    write_atomic(config.output, text)
    failed = [r.check for r in reports if not r.passed]
    if failed:
        logger.error("Self-test failures: %s", ", ".join(failed))
        return EXIT_NUMERICAL
    return EXIT_OK


COMMANDS = {
    "fit": run_fit,
    "simulate": run_simulate,
    "selftest": run_selftest_command,
}


# =============================================================================
# Entry point
# =============================================================================


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="effqr", description="Efficient multi-level quantile regression")
    parser.add_argument("-v", "--verbose", action="count", default=0, help="-v for INFO, -vv for DEBUG")

    shared = argparse.ArgumentParser(add_help=False)
    shared.add_argument("--seed", type=int, default=None, help="Master seed (default: EFFQR_SEED)")
    shared.add_argument("--output", "-o", default=None, help="Output file (default: stdout)")
    shared.add_argument("--format", choices=("tsv", "json"), default="tsv")

    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    fit = sub.add_parser("fit", parents=[shared], help="Estimate on a CSV file")
    fit.add_argument("--input", "-i", required=True, help="CSV file with a header row")
    fit.add_argument("--response", default="y")
    fit.add_argument("--covariates", required=True, help="Comma-separated covariate columns")
    fit.add_argument("--log", default=None, help="Comma-separated columns to log-transform, or 'all'")
    fit.add_argument("--intercept", action=argparse.BooleanOptionalAction, default=True)
    fit.add_argument("--levels", default="0.5", help="Comma-separated quantile levels")
    fit.add_argument("--bandwidth", type=float, default=None)
    fit.add_argument("--replications", type=int, default=DEFAULT_REPLICATIONS)
    fit.add_argument("--se", choices=("bootstrap", "asymptotic"), default="bootstrap")
    fit.add_argument("--jobs", type=int, default=None, help="Parallel workers (default: EFFQR_JOBS)")

    sim = sub.add_parser("simulate", parents=[shared], help="Run a Monte Carlo design")
    sim.add_argument("--config", default=None, help="key = value simulation config file")
    sim.add_argument("--model", default=None, help="M1..M5")
    sim.add_argument("--n", type=int, default=None)
    sim.add_argument("--levels", default=None)
    sim.add_argument("--replications", type=int, default=None)
    sim.add_argument("--lognormal-sigma", type=float, default=None)
    sim.add_argument("--fast", action="store_true", help="Cap replications at 200")
    sim.add_argument("--jobs", type=int, default=None)

    sub.add_parser("selftest", parents=[shared], help="Run the built-in oracles")
    return parser


def _configure_logging(verbose: int) -> None:
    if verbose >= 2:
        level = logging.DEBUG
    elif verbose == 1:
        level = logging.INFO
    else:
        level = getattr(logging, os.environ.get("EFFQR_LOG_LEVEL", "WARNING").upper(), logging.WARNING)
    logging.basicConfig(
        level=level, stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s"
    )


def main(argv: Sequence[str] | None = None) -> int:
    """Console entry point; returns the process exit code."""
    try:
        args = build_parser().parse_args(argv)
        _configure_logging(args.verbose)
        config = config_from_args(args)
        return COMMANDS[config.subcommand](config)
    except EffQRError as exc:
        logger.debug("Run failed", exc_info=True)
        print(f"effqr: error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
