import math

import numpy as np
import pytest
from scipy import integrate

from core.detectors import Boundary
from core.exceptions import ConfigurationError, NoCrossingError
from services.limit_sim import (
    BreakSpec,
    GaussianGrid,
    PiecewiseConstant,
    build_table,
    critical_value,
    h_general,
    h_single_break,
    limit_traces,
    local_delay,
    local_power,
    simulate_functionals,
    simulate_limit_draw,
    size_distribution,
)
from services.mc_runner import replication_rng

LINEAR = Boundary(kind="linear")
SMALL = dict(n_grid=200, n_reps=2000, seed=17)


class TestGaussianGrid:

    def test_increment_variance(self):
        grid = GaussianGrid(50, dim=2, horizon=3.0)
        paths = np.stack([grid.sample(replication_rng(1, i)) for i in range(2000)])
        increments = np.diff(paths, axis=1)
        assert increments.var() == pytest.approx(grid.step, rel=0.05)
        np.testing.assert_array_equal(paths[:, 0], 0.0)

    def test_spans(self):
        assert GaussianGrid(10).span == 1.0
        assert GaussianGrid(10, horizon=math.inf).span == 1.0
        assert GaussianGrid(10, horizon=4.0).span == pytest.approx(3.0)

    def test_horizon_above_one(self):
        with pytest.raises(ConfigurationError):
            GaussianGrid(10, horizon=0.5)


class TestLimitTraces:

    def test_stacked_dominates_forward(self):
        grid = GaussianGrid(300, 1)
        W = np.stack([grid.sample(replication_rng(3, i)) for i in range(20)])
        q, _ = limit_traces("q", None, LINEAR, W)
        sbq, _ = limit_traces("sbq", None, LINEAR, W)
        bq, _ = limit_traces("bq", None, LINEAR, W)
        assert np.all(sbq.max(axis=1) >= q.max(axis=1))
        assert np.all(sbq.max(axis=1) >= bq.max(axis=1))

    def test_infinite_horizon_stacked_dominates_forward(self):
        grid = GaussianGrid(300, 1, math.inf)
        W = np.stack([grid.sample(replication_rng(4, i)) for i in range(20)])
        q, loc = limit_traces("q", math.inf, LINEAR, W)
        sbq, _ = limit_traces("sbq", math.inf, LINEAR, W)
        assert np.all(sbq.max(axis=1) >= q.max(axis=1) - 1e-12)
        assert loc[0] > 1.0

    def test_locations(self):
        W = np.zeros((1, 11, 1))
        _, loc = limit_traces("q", 3.0, LINEAR, W)
        assert loc[0] == pytest.approx(1.2)
        assert loc[-1] == pytest.approx(3.0)

    def test_invalid_combinations(self):
        W = np.zeros((1, 11, 1))
        with pytest.raises(ConfigurationError):
            limit_traces("bq", 2.0, LINEAR, W)
        with pytest.raises(ConfigurationError):
            limit_traces("sbq", 2.0, Boundary(kind="radical_chu", alpha=0.05), W)
        with pytest.raises(ConfigurationError):
            limit_traces("q", math.inf, LINEAR, W, drift=np.zeros(11))

    def test_single_draw(self):
        value = simulate_limit_draw("q", 1, None, LINEAR, 100, replication_rng(0, 0))
        assert value >= 0.0


class TestDrift:

    def test_single_break_value(self):
        assert h_single_break(1.0, BreakSpec(1.0, 0.5)) == pytest.approx(0.34657, abs=1e-5)
        assert h_single_break(0.3, BreakSpec(1.0, 0.5)) == 0.0

    def test_general_matches_single_break(self):
        r = np.linspace(0.05, 3.0, 40)
        g = PiecewiseConstant(breaks=(0.5,), values=(0.0, 2.0))
        np.testing.assert_allclose(h_general(r, g), h_single_break(r, BreakSpec(2.0, 0.5)), atol=1e-12)

    def test_general_against_quadrature(self):
        g = PiecewiseConstant(breaks=(0.3, 0.8), values=(0.5, -1.0, 2.0))

        def kinks(r):
            return [p for p in g.breaks if p < r] or None

        def G(r):
            return integrate.quad(g, 0.0, r, points=kinks(r), limit=200)[0]

        for r in (0.2, 0.5, 1.0, 1.7):
            inner = integrate.quad(lambda z: G(z) / z, 0.0, r, points=kinks(r), limit=200)[0]
            assert h_general(r, g, sigma=2.0) == pytest.approx((G(r) - inner) / 2.0, abs=1e-7)

    def test_constant_g_has_no_drift(self):
        g = PiecewiseConstant(breaks=(), values=(1.5,))
        np.testing.assert_allclose(h_general(np.array([0.1, 1.0, 5.0]), g), 0.0, atol=1e-12)

    def test_invalid_pieces(self):
        with pytest.raises(ConfigurationError):
            PiecewiseConstant(breaks=(0.5, 0.2), values=(0.0, 1.0, 2.0))
        with pytest.raises(ConfigurationError):
            PiecewiseConstant(breaks=(0.5,), values=(1.0,))


class TestCriticalValues:

    def test_forward_retrospective_near_published(self):
        assert critical_value("q", 1, None, alpha=0.05, **SMALL) == pytest.approx(0.945, abs=0.06)

    def test_worker_count_does_not_change_result(self):
        one = critical_value("sbq", 1, None, alpha=0.05, n_grid=100, n_reps=1000, seed=2, workers=1)
        two = critical_value("sbq", 1, None, alpha=0.05, n_grid=100, n_reps=1000, seed=2, workers=2)
        assert one == two

    def test_too_few_replications(self):
        with pytest.raises(ConfigurationError):
            critical_value("q", 1, None, n_grid=100, n_reps=10, seed=0)

    def test_table_is_monotone(self):
        table = build_table(["q", "bq"], [1, 2], [0.10, 0.05, 0.01], [None, 2.0],
                            n_grid=100, n_reps=1000, seed=8)
        frame = table.to_frame()
        assert not ((frame["kind"] == "bq") & (frame["horizon"] != "ret")).any()
        for (kind, horizon, nu), group in frame.groupby(["kind", "horizon", "nu"]):
            ordered = group.sort_values("alpha", ascending=False)["value"].to_numpy()
            assert np.all(np.diff(ordered) >= 0)
        q = frame[(frame["kind"] == "q") & (frame["horizon"] == "ret") & (frame["alpha"] == 0.05)]
        assert q.sort_values("nu")["value"].is_monotonic_increasing


class TestLocalPowerAndDelay:

    def test_no_drift_recovers_size(self):
        power = local_power("q", BreakSpec(0.0, 0.5), alpha=0.05, **SMALL)
        assert 0.025 <= power <= 0.06

    def test_backward_beats_forward_mid_sample(self):
        spec = BreakSpec(6.0, 0.5)
        assert local_power("bq", spec, **SMALL) > local_power("q", spec, **SMALL) + 0.10

    def test_delay_without_crossings(self):
        with pytest.raises(NoCrossingError):
            local_delay("sbq", BreakSpec(0.0, 1.5), lam=100.0, m=2.0, n_grid=100, n_reps=1000, seed=1)

    def test_delay_is_positive(self):
        delay = local_delay("sbq", BreakSpec(20.0, 1.5), lam=1.2, m=3.0, n_grid=200, n_reps=1000, seed=1)
        assert 0.0 < delay < 1.5

    def test_delay_break_must_follow_history(self):
        with pytest.raises(ConfigurationError):
            local_delay("q", BreakSpec(5.0, 0.5), m=2.0)


class TestSizeDistribution:

    def test_histogram_is_normalised(self):
        frame = size_distribution("q", None, lam=0.9, n_grid=100, n_reps=1000, seed=3, bins=10)
        assert list(frame.columns) == ["abscissa", "value"]
        assert frame["value"].sum() == pytest.approx(1.0)
        assert frame["abscissa"].between(0.0, 1.0).all()

    def test_backward_is_time_reversed_forward(self):
        grid = GaussianGrid(200, 1)
        W = np.stack([grid.sample(replication_rng(6, i)) for i in range(5)])
        reversed_W = W[:, -1:] - W[:, ::-1]
        bq, _ = limit_traces("bq", None, LINEAR, W)
        q, _ = limit_traces("q", None, LINEAR, reversed_W)
        np.testing.assert_allclose(bq, q[:, ::-1], atol=1e-12)

    def test_monitoring_abscissa(self):
        frame = size_distribution("sbq", 3.0, lam=1.0, n_grid=100, n_reps=1000, seed=3, bins=4)
        np.testing.assert_allclose(frame["abscissa"], [1.25, 1.75, 2.25, 2.75])


@pytest.mark.slow
class TestPublishedTables:

    @pytest.mark.parametrize("nu, alpha, expected", [
        (1, 0.10, 0.847), (1, 0.05, 0.945), (1, 0.01, 1.143),
        (2, 0.05, 1.032), (3, 0.05, 1.081), (4, 0.05, 1.114),
    ])
    def test_retrospective_forward(self, nu, alpha, expected):
        assert critical_value("q", nu, None, alpha=alpha, seed=2024) == pytest.approx(expected, abs=0.02)

    def test_retrospective_stacked(self):
        assert critical_value("sbq", 1, None, alpha=0.05, seed=2024) == pytest.approx(1.198, abs=0.02)

    @pytest.mark.parametrize("m, expected", [(2.0, 1.198), (4.0, 1.339), (10.0, 1.440), (math.inf, 1.514)])
    def test_stacked_monitoring(self, m, expected):
        assert critical_value("sbq", 1, m, alpha=0.05, seed=2024) == pytest.approx(expected, abs=0.02)


def test_single_step_grid_is_folded_normal():
    from scipy import stats

    draws = simulate_functionals("q", 1, None, LINEAR, n_grid=1, n_reps=20000, seed=9)[:, 0]
    assert stats.kstest(3.0 * draws, stats.halfnorm.cdf).pvalue > 1e-3


@pytest.mark.slow
class TestLimitFigures:

    def test_forward_size_mode_early(self):
        frame = size_distribution("q", None, alpha=0.05, n_grid=1000, n_reps=20000, seed=11, bins=20)
        mode = frame.loc[frame["value"].idxmax(), "abscissa"]
        assert 0.15 < mode < 0.4

    def test_forward_backward_mirror(self):
        from scipy import stats

        kwargs = dict(alpha=0.05, n_grid=1000, n_reps=20000, seed=12, bins=20)
        fwd = size_distribution("q", None, **kwargs)
        bwd = size_distribution("bq", None, **kwargs)
        distance = stats.wasserstein_distance(1.0 - fwd["abscissa"], bwd["abscissa"],
                                              fwd["value"], bwd["value"])
        assert distance <= 0.05

    def test_stacked_delay_shortest(self):
        grid = dict(n_grid=1000, n_reps=20000, seed=14)
        lam_sbq = critical_value("sbq", 1, 4.0, alpha=0.05, **grid)
        lam_q = critical_value("q", 1, 4.0, alpha=0.05, **grid)
        kwargs = dict(m=4.0, n_grid=1000, n_reps=5000, seed=13)
        spec = BreakSpec(20.0, 2.0)
        sbq = local_delay("sbq", spec, lam=lam_sbq, **kwargs)
        assert sbq < local_delay("q", spec, lam=lam_q, **kwargs)
        assert sbq < local_delay("q", spec, boundary="radical_chu", **kwargs)

    def test_forward_beats_backward_after_an_early_break(self):
        kwargs = dict(n_grid=1000, n_reps=20000, seed=15)
        spec = BreakSpec(12.0, 0.1)
        assert local_power("q", spec, **kwargs) > local_power("bq", spec, **kwargs)
