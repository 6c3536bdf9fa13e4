"""Tests for the estimator module - one-step updates and bootstrap inference."""

from dataclasses import replace
from unittest.mock import patch

import numpy as np
import pytest

from effqr.core import FitConfig, make_dataset, make_grid
from effqr.density import estimate_density
from effqr.errors import DataError, DensityError, ReplicationError
from effqr.estimator import (
    ESTIMATORS,
    asymptotic_inference,
    bootstrap_se,
    estimate,
    p_values,
)
from effqr.pinball import fit_grid
from effqr.score import build_score_system, score_matrix
from effqr.sim import generate, true_coefficients


class TestEstimate:
    """Tests for the point estimates."""

    @pytest.mark.unit
    def test_shapes(self, hetero_data, grid_57):
        report = estimate(hetero_data, grid_57)

        for name in ESTIMATORS:
            assert report.estimates(name).shape == (2, 2)
        assert report.stacked().shape == (3, 2, 2)
        assert report.p == 2

    @pytest.mark.unit
    def test_tqe_is_the_grid_fit(self, hetero_data, grid_57):
        report = estimate(hetero_data, grid_57)

        np.testing.assert_array_equal(report.tqe, fit_grid(hetero_data, grid_57).beta)

    @pytest.mark.unit
    def test_update_is_affine_in_mean_score(self, hetero_data, grid_57):
        report = estimate(hetero_data, grid_57)

        np.testing.assert_allclose(report.eff, report.tqe + report.sigma2 * report.mean_score, rtol=1e-12)
        np.testing.assert_allclose(
            report.sef, report.tqe + report.sef_sigma2 * report.sef_mean_score, rtol=1e-12
        )

    @pytest.mark.unit
    def test_mean_score_recomputed_independently(self, hetero_data, grid_57):
        """Rebuild the averaged score for every target from the public pieces."""
        cfg = FitConfig()
        coeffs = fit_grid(hetero_data, grid_57, cfg)
        dens = estimate_density(hetero_data, coeffs, cfg)
        system = build_score_system(hetero_data, dens, grid_57)
        psi, _ = score_matrix(hetero_data, coeffs, dens)

        report = estimate(hetero_data, grid_57, cfg)

        for k in range(grid_57.L):
            for j in range(hetero_data.p):
                mean = np.mean(psi @ system.direction(k, j))
                assert report.mean_score[j, k] == pytest.approx(mean, rel=1e-9, abs=1e-10)
                assert report.sigma2[j, k] == pytest.approx(system.bound(k, j), rel=1e-12)

    @pytest.mark.unit
    def test_zero_mean_score_leaves_fit_unchanged(self, hetero_data, grid_57):
        report = estimate(hetero_data, grid_57)
        zeroed = replace(report, mean_score=np.zeros_like(report.mean_score))

        np.testing.assert_array_equal(zeroed.tqe + zeroed.sigma2 * zeroed.mean_score, report.tqe)

    @pytest.mark.unit
    def test_bounds_positive_and_ordered(self, hetero_data):
        report = estimate(hetero_data, make_grid([0.3, 0.5, 0.7]))

        assert np.all(report.sigma2 > 0)
        assert np.all(report.sigma2 <= report.sef_sigma2 * (1 + 1e-10))

    @pytest.mark.unit
    def test_deterministic(self, hetero_data, grid_57):
        first = estimate(hetero_data, grid_57).stacked()
        second = estimate(hetero_data, grid_57).stacked()

        np.testing.assert_array_equal(first, second)

    @pytest.mark.unit
    def test_diagnostics(self, hetero_data, grid_57):
        report = estimate(hetero_data, grid_57, FitConfig(bandwidth=0.05))
        diag = report.diagnostics.to_dict()

        assert diag["bandwidth"] == 0.05
        assert diag["n"] == 400
        assert diag["iterations"] > 0
        assert diag["bound"] == pytest.approx(np.abs(hetero_data.x).max())
        assert set(diag) == {
            "bandwidth", "clamped_cells", "crossings", "iterations", "nonconverged", "bound", "n"
        }

    @pytest.mark.unit
    def test_constant_response_fails_in_density_stage(self):
        data = make_dataset(np.full(50, 1.0), np.ones((50, 1)))

        with pytest.raises(DensityError) as exc_info:
            estimate(data, make_grid([0.5]), FitConfig(bandwidth=0.1))

        assert exc_info.value.stage == "density"

    @pytest.mark.unit
    def test_unknown_estimator_name(self, hetero_data, grid_57):
        with pytest.raises(ValueError):
            estimate(hetero_data, grid_57).estimates("OLS")

    @pytest.mark.integration
    def test_m1_estimates_near_truth(self, m1_data, grid_57):
        report = estimate(m1_data, grid_57)
        truth = true_coefficients("M1", grid_57.levels)

        for name in ESTIMATORS:
            np.testing.assert_allclose(report.estimates(name), truth, atol=0.3)

    @pytest.mark.slow
    def test_eff_variance_not_above_tqe(self):
        """Over replications on M2, EFF never loses to TQE by more than noise."""
        grid = make_grid([0.5, 0.7])
        draws = np.stack(
            [estimate(generate("M2", 1000, seed=seed), grid).stacked() for seed in range(200)]
        )
        sd = draws.std(axis=0, ddof=1)

        assert np.all(sd[2] <= 1.1 * sd[0])


class TestPValues:
    """Tests for one-sided (upper tail of |z|) normal p-values."""

    @pytest.mark.unit
    def test_values(self):
        np.testing.assert_allclose(p_values([0.0, 1.96, -1.96], [1.0, 1.0, 1.0]), [0.5, 0.025, 0.025], atol=1e-4)

    @pytest.mark.unit
    def test_zero_esd(self):
        np.testing.assert_array_equal(p_values([0.0, 2.0], [0.0, 0.0]), [0.5, 0.0])

    @pytest.mark.unit
    def test_range_and_monotone(self):
        est = np.linspace(0.0, 5.0, 11)
        pv = p_values(est, np.ones_like(est))

        assert np.all((pv >= 0) & (pv <= 0.5))
        assert np.all(np.diff(pv) < 0)


class TestBootstrap:
    """Tests for bootstrap standard errors."""

    @pytest.mark.unit
    def test_two_replications(self, hetero_data, grid_57):
        result = bootstrap_se(hetero_data, grid_57, FitConfig(n_jobs=1), replications=2, seed=3)

        assert result.draws.shape == (2, 3, 2, 2)
        np.testing.assert_allclose(
            result.esd, np.abs(result.draws[0] - result.draws[1]) / np.sqrt(2.0), rtol=1e-12
        )
        assert result.failures == 0
        assert result.seed == 3
        np.testing.assert_array_equal(result.est, result.report.stacked())

    @pytest.mark.unit
    def test_seed_defaults_to_config(self, hetero_data, grid_57):
        result = bootstrap_se(hetero_data, grid_57, FitConfig(seed=99, n_jobs=1), replications=2)

        assert result.seed == 99

    @pytest.mark.unit
    def test_independent_of_job_count(self, hetero_data, grid_57):
        serial = bootstrap_se(hetero_data, grid_57, FitConfig(n_jobs=1), replications=4, seed=5)
        parallel = bootstrap_se(hetero_data, grid_57, FitConfig(n_jobs=2), replications=4, seed=5)

        np.testing.assert_array_equal(serial.draws, parallel.draws)
        np.testing.assert_array_equal(serial.esd, parallel.esd)

    @pytest.mark.unit
    def test_too_few_replications(self, hetero_data, grid_57):
        with pytest.raises(DataError):
            bootstrap_se(hetero_data, grid_57, replications=1)

    @pytest.mark.unit
    def test_failures_above_threshold(self, hetero_data, grid_57):
        with patch("effqr.estimator._replicate", return_value=None):
            with pytest.raises(ReplicationError) as exc_info:
                bootstrap_se(hetero_data, grid_57, FitConfig(n_jobs=1), replications=5, seed=1)

        assert exc_info.value.stage == "bootstrap"

    @pytest.mark.slow
    def test_coverage_on_m1(self):
        """Nominal 95% intervals for EFF cover beta2(0.5) in most replications."""
        grid = make_grid([0.5])
        truth = true_coefficients("M1", grid.levels)[1, 0]
        hits = 0
        for seed in range(40):
            result = bootstrap_se(
                generate("M1", 1000, seed=seed), grid, FitConfig(n_jobs=1), replications=100, seed=seed
            )
            est, esd = result.est[2, 1, 0], result.esd[2, 1, 0]
            hits += abs(est - truth) <= 1.96 * esd

        assert hits >= 32


class TestAsymptoticInference:
    """Tests for analytic standard errors."""

    @pytest.mark.unit
    def test_tqe_has_no_analytic_error(self, hetero_data, grid_57):
        est, esd, p_value = asymptotic_inference(estimate(hetero_data, grid_57))

        assert np.all(np.isnan(esd[0]))
        assert np.all(np.isnan(p_value[0]))
        assert np.all(np.isfinite(esd[1:]))
        assert np.all((p_value[1:] >= 0) & (p_value[1:] <= 0.5))

    @pytest.mark.unit
    def test_esd_from_bounds(self, hetero_data, grid_57):
        report = estimate(hetero_data, grid_57)
        _, esd, _ = asymptotic_inference(report)

        np.testing.assert_allclose(esd[2], np.sqrt(report.sigma2 / hetero_data.n))
        np.testing.assert_allclose(esd[1], np.sqrt(report.sef_sigma2 / hetero_data.n))
