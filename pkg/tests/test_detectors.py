import math

import numpy as np
import pytest

from core.detectors import (
    Boundary,
    DetectorConfig,
    backward_max_stat,
    backward_trace,
    boundary_value,
    cusum_path,
    first_crossings,
    forward_max_stat,
    forward_trace,
    partial_project,
    retrospective_test,
    stacked_max_stat,
    stacked_trace,
)
from core.exceptions import ConfigurationError, CriticalValueNotFoundError, DimensionError
from core.regression import Dataset, batch_history_quantities, batch_recursive_residuals, fit_history

LINEAR = Boundary(kind="linear", lam=0.948)


def brute_force(fit, H=None):
    """Forward, backward and stacked statistics straight from the x_t w_t products"""
    T = fit.T
    g = fit.weighted_residuals() @ fit.C_inv_sqrt.T / (fit.sigma_hat * math.sqrt(T))
    if H is not None:
        g = g @ H
    d = lambda r: 1.0 + 2.0 * r
    fwd = max(np.abs(g[:t].sum(axis=0)).max() / d(t / T) for t in range(1, T + 1))
    bwd = max(np.abs(g[t - 1:].sum(axis=0)).max() / d((T - t + 1) / T) for t in range(1, T + 1))
    sbq = max(
        np.abs(g[s - 1:t].sum(axis=0)).max() / d((t - s + 1) / T)
        for t in range(1, T + 1) for s in range(1, t + 1)
    )
    return fwd, bwd, sbq


class TestCusumPath:

    def test_hand_example(self, tiny_dataset):
        path = cusum_path(fit_history(tiny_dataset))
        np.testing.assert_allclose(path.q[:, 0], [0.0, 0.0, 1 / math.sqrt(2), 1 / math.sqrt(2)], atol=1e-12)
        assert path.nu == 1

    def test_increments_reconstruct_residuals(self, null_regression):
        fit = fit_history(null_regression)
        path = cusum_path(fit)
        expected = fit.weighted_residuals() @ fit.C_inv_sqrt.T / (fit.sigma_hat * math.sqrt(fit.T))
        np.testing.assert_allclose(np.diff(path.q, axis=0), expected, atol=1e-10)
        np.testing.assert_array_equal(path.q[0], 0.0)

    def test_scale_and_shift_invariance(self, null_regression):
        data = null_regression
        moved = data.with_response(3.0 * data.y + data.X @ np.array([-2.0, 0.7]))
        np.testing.assert_allclose(cusum_path(fit_history(moved)).q, cusum_path(fit_history(data)).q, atol=1e-10)


class TestBoundary:

    def test_linear_values(self):
        assert boundary_value(LINEAR, 0.0) == pytest.approx(0.948)
        assert boundary_value(LINEAR, 0.5) == pytest.approx(1.896)

    def test_linear_strictly_increasing(self):
        values = [boundary_value(LINEAR, r) for r in np.linspace(0, 5, 50)]
        assert np.all(np.diff(values) > 0)

    def test_radical_value(self):
        b = Boundary(kind="radical_chu", alpha=0.05)
        assert boundary_value(b, 0.0) == pytest.approx(2.44775, abs=1e-5)
        assert b.threshold == 1.0

    def test_negative_r(self):
        with pytest.raises(ConfigurationError):
            boundary_value(LINEAR, -0.1)

    def test_linear_needs_lambda(self):
        with pytest.raises(ConfigurationError):
            Boundary(kind="linear").threshold

    def test_radical_needs_alpha(self):
        with pytest.raises(ConfigurationError):
            Boundary(kind="radical_chu")


class TestMaxStatistics:

    def test_hand_example(self, tiny_dataset):
        path = cusum_path(fit_history(tiny_dataset))
        assert forward_max_stat(path, LINEAR).statistic == pytest.approx(0.30305, abs=1e-5)
        assert backward_max_stat(path, LINEAR).statistic == pytest.approx(0.30305, abs=1e-5)
        # s = t = 2 gives 0.7071 / (1 + 2/3)
        assert stacked_max_stat(path, LINEAR).statistic == pytest.approx(0.42426, abs=1e-5)

    def test_zero_path(self):
        data = Dataset.from_regressors([1.0, 1.0, 1.0, 5.0])
        fit = fit_history(data)
        path = cusum_path(fit)
        path.q[:] = 0.0
        for stat in (forward_max_stat, backward_max_stat, stacked_max_stat):
            report = stat(path, LINEAR)
            assert report.statistic == 0.0
            assert not report.reject
            assert report.first_crossing is None

    def test_brute_force_equivalence(self, rng):
        for _ in range(10):
            T = int(rng.integers(8, 50))
            x = rng.standard_normal(T)
            y = 1.0 + x + rng.standard_normal(T)
            y[T // 2:] += rng.normal(0.0, 2.0)
            fit = fit_history(Dataset.from_regressors(y, x))
            path = cusum_path(fit)
            fwd, bwd, sbq = brute_force(fit)
            assert forward_max_stat(path, LINEAR).statistic == pytest.approx(fwd, abs=1e-10)
            assert backward_max_stat(path, LINEAR).statistic == pytest.approx(bwd, abs=1e-10)
            assert stacked_max_stat(path, LINEAR).statistic == pytest.approx(sbq, abs=1e-10)

    def test_stacked_dominates(self, rng):
        for _ in range(20):
            y = rng.standard_normal(60)
            y[40:] += 1.0
            path = cusum_path(fit_history(Dataset.from_regressors(y)))
            sbq = stacked_max_stat(path, LINEAR).statistic
            assert sbq >= forward_max_stat(path, LINEAR).statistic
            assert sbq >= backward_max_stat(path, LINEAR).statistic

    def test_decomposition_identity(self, null_regression):
        q = cusum_path(fit_history(null_regression)).q
        T = q.shape[0] - 1
        for t in range(1, T + 1):
            np.testing.assert_allclose(q[t - 1] + (q[T] - q[t - 1]), q[T], atol=1e-10)

    def test_stacked_rows_reproduce_forward_and_backward(self, null_regression):
        q = cusum_path(fit_history(null_regression)).q[None]
        T = q.shape[1] - 1
        den = 1.0 + 2.0 * np.arange(1, T + 1) / T
        stacked = stacked_trace(q, den)[0]
        fwd = forward_trace(q, den)[0]
        bwd = backward_trace(q, den)[0]
        assert np.all(stacked >= fwd - 1e-12)
        assert stacked[-1] == pytest.approx(bwd.max())

    def test_statistics_invariant(self, null_regression):
        data = null_regression
        moved = data.with_response(0.3 * data.y + data.X @ np.array([5.0, 1.0]))
        for stat in (forward_max_stat, backward_max_stat, stacked_max_stat):
            a = stat(cusum_path(fit_history(data)), LINEAR)
            b = stat(cusum_path(fit_history(moved)), LINEAR)
            assert a.statistic == pytest.approx(b.statistic, abs=1e-10)
            assert int(np.argmax(a.per_t)) == int(np.argmax(b.per_t))

    def test_report_consistency(self, mean_shift):
        report = backward_max_stat(cusum_path(fit_history(mean_shift)), Boundary(lam=0.5))
        assert report.reject == (report.statistic >= report.lam)
        assert (report.first_crossing is not None) == report.reject
        doc = report.to_dict()
        assert doc["trace"][0]["boundary"] == 0.5
        assert len(doc["trace"]) == mean_shift.T

    def test_radical_boundary_is_not_retrospective(self, tiny_dataset):
        path = cusum_path(fit_history(tiny_dataset))
        with pytest.raises(ConfigurationError):
            forward_max_stat(path, Boundary(kind="radical_chu", alpha=0.05))

    def test_first_crossings(self):
        trace = np.array([[0.1, 0.6, 0.9], [0.1, 0.2, 0.3]])
        np.testing.assert_array_equal(first_crossings(trace, 0.5), [2, 0])


class TestPartialProjection:

    def test_identity(self, null_regression):
        path = cusum_path(fit_history(null_regression))
        np.testing.assert_allclose(partial_project(path, np.eye(2)).q, path.q)

    def test_selects_coordinate(self, null_regression):
        path = cusum_path(fit_history(null_regression))
        projected = partial_project(path, np.array([1.0, 0.0]))
        assert projected.nu == 1
        np.testing.assert_allclose(projected.q[:, 0], path.q[:, 0])

    def test_slope_only_against_brute_force(self, null_regression):
        fit = fit_history(null_regression)
        H = np.array([[0.0], [1.0]])
        projected = partial_project(cusum_path(fit), H)
        fwd, bwd, sbq = brute_force(fit, H)
        assert forward_max_stat(projected, LINEAR).statistic == pytest.approx(fwd, abs=1e-10)
        assert stacked_max_stat(projected, LINEAR).statistic == pytest.approx(sbq, abs=1e-10)

    def test_not_orthonormal(self, null_regression):
        path = cusum_path(fit_history(null_regression))
        with pytest.raises(ConfigurationError):
            partial_project(path, np.array([[1.0], [1.0]]))

    def test_wrong_rows(self, null_regression):
        path = cusum_path(fit_history(null_regression))
        with pytest.raises(DimensionError):
            partial_project(path, np.eye(3)[:, :1])


class TestRetrospectiveTest:

    def test_published_lambda(self, null_regression):
        report = retrospective_test(null_regression, DetectorConfig(kind="sbq", alpha=0.05))
        assert report.lam == pytest.approx(1.277)
        assert report.nu == 2

    def test_projection_uses_reduced_dimension(self, null_regression):
        cfg = DetectorConfig(kind="q", H=np.array([0.0, 1.0]))
        assert retrospective_test(null_regression, cfg).lam == pytest.approx(0.945)

    def test_explicit_lambda(self, null_regression):
        report = retrospective_test(null_regression, DetectorConfig(kind="bq", lam=0.01))
        assert report.reject
        assert report.first_crossing >= 1

    def test_untabulated_alpha(self, null_regression):
        with pytest.raises(CriticalValueNotFoundError):
            retrospective_test(null_regression, DetectorConfig(kind="q", alpha=0.07))

    def test_affine_invariant_report(self, null_regression):
        cfg = DetectorConfig(kind="bq")
        a = retrospective_test(null_regression, cfg)
        b = retrospective_test(null_regression.with_response(2 * null_regression.y + 1.0), cfg)
        assert a.statistic == pytest.approx(b.statistic, abs=1e-10)
        assert a.reject == b.reject

    def test_late_break_favours_backward(self):
        # mean shift 0 -> 1 at t = 75 of 100; batch kernels over 2,000 seeds
        R, T = 2000, 100
        rng = np.random.default_rng(7)
        X = np.ones((R, T, 1))
        y = rng.standard_normal((R, T))
        y[:, 74:] += 1.0
        w = batch_recursive_residuals(X, y)
        sigma, C_inv_sqrt = batch_history_quantities(X, w, T)
        S = np.concatenate([np.zeros((R, 1, 1)), np.cumsum(X * w[:, :, None], axis=1)], axis=1)
        P = S * C_inv_sqrt / (sigma * math.sqrt(T))[:, None, None]
        den = 1.0 + 2.0 * np.arange(1, T + 1) / T
        fwd = (forward_trace(P, den).max(axis=1) >= 0.948).mean()
        bwd = (backward_trace(P, den).max(axis=1) >= 0.948).mean()
        assert bwd - fwd >= 0.30


class TestDetectorConfig:

    def test_backward_cannot_monitor(self):
        with pytest.raises(ConfigurationError):
            DetectorConfig(kind="bq", horizon=2.0)

    def test_radical_requires_forward_monitoring(self):
        with pytest.raises(ConfigurationError):
            DetectorConfig(kind="sbq", boundary="radical_chu", horizon=2.0)
        with pytest.raises(ConfigurationError):
            DetectorConfig(kind="q", boundary="radical_chu")

    def test_radical_requires_univariate(self):
        with pytest.raises(ConfigurationError):
            DetectorConfig(kind="q", boundary="radical_chu", horizon=2.0).effective_nu(2)

    def test_horizon_above_one(self):
        with pytest.raises(ConfigurationError):
            DetectorConfig(kind="q", horizon=1.0)

    def test_unknown_kind(self):
        with pytest.raises(ConfigurationError):
            DetectorConfig(kind="mosum")
