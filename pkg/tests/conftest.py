"""Pytest fixtures and configuration for EffQR tests."""

from pathlib import Path

import numpy as np
import pytest

from effqr.core import Dataset, FitConfig, make_dataset, make_grid
from effqr.sim import generate


# =============================================================================
# Dataset Factories
# =============================================================================


def make_location_scale(n: int, seed: int = 0) -> Dataset:
    """Heteroscedastic two-column sample: y = 2 + x + x * e, x log-normal."""
    rng = np.random.default_rng(seed)
    x2 = rng.lognormal(size=n)
    y = 2.0 + x2 + x2 * rng.normal(size=n)
    return make_dataset(y, np.column_stack([np.ones(n), x2]))


def make_random_instance(rng: np.random.Generator, n: int, p: int) -> Dataset:
    """Small continuous instance with an intercept column (for oracle checks)."""
    x = np.column_stack([np.ones(n), rng.normal(size=(n, p - 1))])
    y = x @ rng.normal(size=p) + rng.standard_t(3, size=n)
    return make_dataset(y, x)


def write_csv(path: Path, header: list[str], rows: list[list]) -> Path:
    """Write a small CSV file and return its path."""
    lines = [",".join(header)] + [",".join(str(v) for v in row) for row in rows]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


# =============================================================================
# Data Fixtures
# =============================================================================


@pytest.fixture
def median_data() -> Dataset:
    """Intercept-only sample whose median is 2."""
    return make_dataset([1.0, 2.0, 9.0], np.ones((3, 1)))


@pytest.fixture
def ladder_data() -> Dataset:
    """Intercept-only sample y = 1..10 (flat optimum at tau = 0.3)."""
    return make_dataset(np.arange(1.0, 11.0), np.ones((10, 1)))


@pytest.fixture
def hetero_data() -> Dataset:
    """Location-scale sample, n = 400."""
    return make_location_scale(400, seed=7)


@pytest.fixture
def m1_data() -> Dataset:
    """M1 sample, n = 1000."""
    return generate("M1", 1000, seed=11)


@pytest.fixture
def grid_57():
    return make_grid([0.5, 0.7])


@pytest.fixture
def fit_config() -> FitConfig:
    return FitConfig()


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(20240607)


# =============================================================================
# CSV Fixtures
# =============================================================================


@pytest.fixture
def simple_csv(tmp_path) -> Path:
    """Three-row CSV with header y,x."""
    return write_csv(tmp_path / "simple.csv", ["y", "x"], [[1.5, 1.0], [2.5, 2.0], [3.0, 4.0]])


@pytest.fixture
def m1_csv(tmp_path) -> Path:
    """M1 sample of 600 rows written as CSV (columns y, x2)."""
    data = generate("M1", 600, seed=5)
    rows = [[f"{y:.12g}", f"{x2:.12g}"] for y, x2 in zip(data.y, data.x[:, 1])]
    return write_csv(tmp_path / "m1.csv", ["y", "x2"], rows)


# =============================================================================
# Environment Fixtures
# =============================================================================


EFFQR_VARIABLES = [
    "EFFQR_BANDWIDTH",
    "EFFQR_BANDWIDTH_CONSTANT",
    "EFFQR_DENSITY_FLOOR",
    "EFFQR_TOLERANCE",
    "EFFQR_MAX_ITERATIONS",
    "EFFQR_SEED",
    "EFFQR_JOBS",
    "EFFQR_LOG_LEVEL",
]


@pytest.fixture
def mock_env(monkeypatch) -> dict:
    """Set up mock environment variables."""
    env = {
        "EFFQR_BANDWIDTH": "0.08",
        "EFFQR_BANDWIDTH_CONSTANT": "1.5",
        "EFFQR_DENSITY_FLOOR": "0.05",
        "EFFQR_TOLERANCE": "1e-8",
        "EFFQR_MAX_ITERATIONS": "150",
        "EFFQR_SEED": "4242",
        "EFFQR_JOBS": "1",
    }
    for key, value in env.items():
        monkeypatch.setenv(key, value)
    return env


@pytest.fixture
def clear_env(monkeypatch) -> None:
    """Clear EffQR environment variables."""
    for key in EFFQR_VARIABLES:
        monkeypatch.delenv(key, raising=False)
