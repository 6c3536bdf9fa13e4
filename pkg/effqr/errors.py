"""Exception hierarchy shared by the estimation pipeline and its front ends."""

from contextlib import contextmanager
from typing import Iterator

# Process exit codes used by the CLI
EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERICAL = 3


class EffQRError(Exception):
    """Base class for all effqr errors.

    The stage is the pipeline step that raised the error ("fit", "density",
    "score", ...). It is stamped by :func:`stage` when the error crosses a
    stage boundary and is rendered as a prefix of the message.
    """

    exit_code = EXIT_NUMERICAL

    def __init__(self, message: str, stage: str | None = None):
        super().__init__(message)
        self.message = message
        self.stage = stage

    def __str__(self) -> str:
        if self.stage:
            return f"[{self.stage}] {self.message}"
        return self.message


class UsageError(EffQRError):
    """Invalid command-line usage or run configuration."""

    exit_code = EXIT_USAGE


# -----------------------------------------------------------------------------
# Data errors
# -----------------------------------------------------------------------------


class DataError(EffQRError, ValueError):
    """Input data or configuration values are invalid."""

    exit_code = EXIT_DATA


class DimensionError(DataError):
    """Array shapes are inconsistent."""


class NonFiniteError(DataError):
    """A NaN or infinite entry was found (row is 1-based)."""

    def __init__(self, message: str, row: int, stage: str | None = None):
        super().__init__(message, stage)
        self.row = row


class GridError(DataError):
    """Quantile levels are unsorted, duplicated or outside (0, 1)."""


class BandwidthError(DataError):
    """Bandwidth is non-positive or pushes an off-grid level outside (0, 1)."""


class MissingColumnError(DataError):
    """A configured column is absent from the CSV header."""

    def __init__(self, column: str, stage: str | None = None):
        super().__init__(f"Column not found in input header: {column!r}", stage)
        self.column = column


class ParseError(DataError):
    """A CSV cell could not be parsed as a number."""

    def __init__(self, message: str, line: int, column: str, stage: str | None = None):
        super().__init__(message, stage)
        self.line = line
        self.column = column


class EmptyDataError(DataError):
    """No usable rows remain."""


class UnknownModelError(DataError):
    """Simulation model id is not one of M1-M5."""


# -----------------------------------------------------------------------------
# Numerical errors
# -----------------------------------------------------------------------------


class NumericalError(EffQRError, ArithmeticError):
    """A numerical step of the pipeline failed."""

    exit_code = EXIT_NUMERICAL


class RankDeficientError(NumericalError):
    """Design matrix does not have full column rank."""


class SolverError(NumericalError):
    """The pinball-loss solver returned no usable solution."""


class DensityError(NumericalError):
    """Density estimation is impossible (missing off-grid fits, flat quantiles)."""


class NotPositiveDefiniteError(NumericalError):
    """Information matrix is singular or indefinite."""

    def __init__(self, message: str, min_eigenvalue: float, stage: str | None = None):
        super().__init__(message, stage)
        self.min_eigenvalue = min_eigenvalue


class ReplicationError(NumericalError):
    """Too many bootstrap or Monte Carlo replicates failed."""


class OraclePreconditionError(NumericalError):
    """An oracle was asked to certify an instance beyond its size caps."""


@contextmanager
def stage(name: str) -> Iterator[None]:
    """Stamp ``name`` on any EffQRError escaping the block that has no stage yet."""
    try:
        yield
    except EffQRError as exc:
        if exc.stage is None:
            exc.stage = name
        raise
