import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from chaosfbm.errors import InputError, NumericalError, UnsupportedParameterError
from chaosfbm.fbm import (PathEnsemble, TimeGrid, cholesky_jitter, conditional_law, fbm_cov, integrate_path,
                          sample_fbm)

times = st.floats(0.0, 10.0)


class TestTimeGrid:
    def test_endpoints_and_spacing(self):
        g = TimeGrid(2.0, 7)
        assert g.times[0] == 0.0 and g.times[-1] == 2.0
        assert len(g) == 8
        assert np.all(np.diff(g.times) > 0)
        np.testing.assert_allclose(np.diff(g.times), 2.0 / 7, rtol=1e-14)

    def test_times_read_only(self):
        with pytest.raises(ValueError):
            TimeGrid(1.0, 4).times[1] = 3.0

    @pytest.mark.parametrize("horizon,steps", [(0.0, 4), (-1.0, 4), (1.0, 0), (1.0, 2.5), (math.inf, 3)])
    def test_rejects_bad_grid(self, horizon, steps):
        with pytest.raises(InputError):
            TimeGrid(horizon, steps)


class TestCovariance:
    def test_unit_time(self):
        assert fbm_cov(1, 1, 0.5) == 1.0

    def test_frozen_value(self):
        assert fbm_cov(1, 2, 0.3) == pytest.approx(0.757858283255199, rel=1e-14)

    @given(times, times)
    def test_brownian_reduction(self, s, t):
        assert fbm_cov(s, t, 0.5) == pytest.approx(min(s, t), abs=1e-12)

    @given(times, times, st.floats(0.05, 0.95))
    def test_symmetric(self, s, t, H):
        assert fbm_cov(s, t, H) == fbm_cov(t, s, H)

    @pytest.mark.parametrize("H", [1.0, 1.5, 2.0, 0.0, -0.3])
    def test_rejects_outside_unit_interval(self, H):
        with pytest.raises(UnsupportedParameterError):
            fbm_cov(1.0, 2.0, H)

    def test_rejects_negative_time(self):
        with pytest.raises(InputError):
            fbm_cov(-1.0, 1.0, 0.3)

    @settings(max_examples=25, deadline=None)
    @given(st.floats(0.02, 0.98), st.integers(2, 40))
    def test_grid_covariance_factorizes(self, H, n):
        t = np.linspace(1 / n, 1, n)
        L = cholesky_jitter(fbm_cov(t[:, None], t[None, :], H))
        assert np.all(np.isfinite(L))

    def test_jitter_gives_up(self):
        with pytest.raises(NumericalError):
            cholesky_jitter(np.array([[1.0, 2.0], [2.0, 1.0]]))


class TestSampling:
    @pytest.mark.parametrize("H", [0.1, 0.5, 0.8, 1.3])
    @pytest.mark.parametrize("method", ["cholesky", "circulant"])
    def test_starts_at_zero(self, H, method):
        ens = sample_fbm(TimeGrid(1.0, 16), H, 2, 3, seed=5, particles=2, method=method)
        assert ens.values.shape == (3, 2, 17, 2)
        assert np.all(ens.values[:, :, 0, :] == 0.0)

    @pytest.mark.parametrize("method", ["cholesky", "circulant"])
    def test_unit_variance_at_horizon(self, method):
        R = 20000
        ens = sample_fbm(TimeGrid(1.0, 64), 0.5, 1, R, seed=11, method=method)
        w1 = ens.values[:, 0, -1, 0]
        var = np.mean(w1**2)
        se = np.std(w1**2, ddof=1) / math.sqrt(R)
        assert abs(var - 1.0) < 5 * se

    def test_integral_identity(self):
        g = TimeGrid(1.0, 32)
        base = sample_fbm(g, 0.5, 2, 4, seed=3, particles=3)
        high = sample_fbm(g, 1.5, 2, 4, seed=3, particles=3)
        assert np.array_equal(high.values, integrate_path(base.values, g))

    def test_stationary_increments(self):
        g, H, R = TimeGrid(1.0, 32), 0.3, 10000
        w = sample_fbm(g, H, 1, R, seed=17).values[:, 0, :, 0]
        for a, b in [(0, 1), (5, 9), (16, 32), (3, 30)]:
            sq = (w[:, b] - w[:, a]) ** 2
            exact = (g.times[b] - g.times[a]) ** (2 * H)
            assert abs(sq.mean() - exact) < 5 * sq.std(ddof=1) / math.sqrt(R)

    @pytest.mark.parametrize("H", [0.25, 0.75])
    def test_self_similarity_slope(self, H):
        g = TimeGrid(1.0, 64)
        w = sample_fbm(g, H, 1, 10000, seed=2).values[:, 0, :, 0]
        ks = [1, 2, 4, 8, 16, 32, 64]
        slope = np.polyfit(np.log(g.times[ks]), np.log(np.mean(w[:, ks] ** 2, axis=0)), 1)[0]
        assert abs(slope - 2 * H) < 0.05

    def test_brownian_increments_uncorrelated(self):
        R = 10000
        w = sample_fbm(TimeGrid(1.0, 16), 0.5, 1, R, seed=23).values[:, 0, :, 0]
        inc = np.diff(w, axis=1)
        for k in range(0, 15, 3):
            assert abs(np.corrcoef(inc[:, k], inc[:, k + 1])[0, 1]) < 4 / math.sqrt(R)

    def test_deterministic(self):
        g = TimeGrid(1.0, 16)
        a = sample_fbm(g, 0.3, 2, 5, seed=99, particles=3)
        b = sample_fbm(g, 0.3, 2, 5, seed=99, particles=3)
        assert np.array_equal(a.values, b.values)
        c = sample_fbm(g, 0.3, 2, 5, seed=100, particles=3)
        assert not np.array_equal(a.values, c.values)

    def test_prefix_property(self):
        g = TimeGrid(1.0, 16)
        small = sample_fbm(g, 0.3, 2, 3, seed=4, particles=5)
        large = sample_fbm(g, 0.3, 2, 6, seed=4, particles=9)
        assert np.array_equal(large.values[:3, :5], small.values)

    def test_circulant_falls_back_to_exact_law(self):
        g = TimeGrid(1.0, 8)
        ens = sample_fbm(g, 0.9, 1, 4000, seed=8, method="circulant")
        assert np.all(np.isfinite(ens.values))

    @pytest.mark.parametrize("H", [1.0, 2.0, 2.5, 0.0])
    def test_unsupported_hurst(self, H):
        with pytest.raises(UnsupportedParameterError):
            sample_fbm(TimeGrid(1.0, 4), H, 1, 1, seed=0)

    def test_rejects_unknown_method(self):
        with pytest.raises(InputError):
            sample_fbm(TimeGrid(1.0, 4), 0.5, 1, 1, seed=0, method="fft")

    def test_csv_dump(self, tmp_path):
        ens = sample_fbm(TimeGrid(1.0, 3), 0.4, 2, 2, seed=1, particles=2)
        path = ens.to_csv(tmp_path / "w.csv")
        lines = path.read_text().splitlines()
        assert lines[0] == "replica,particle,k,t,x_1,x_2"
        assert len(lines) == 1 + 2 * 2 * 4
        last = lines[-1].split(",")
        assert float(last[4]) == ens.values[1, 1, 3, 0]

    def test_ensemble_shape_check(self):
        with pytest.raises(InputError):
            PathEnsemble(np.zeros((1, 1, 5, 1)), TimeGrid(1.0, 3))


class TestConditionalLaw:
    def test_query_point_observed(self):
        mean, var = conditional_law([0.5, 1.0], [0.2, -0.4], 0.3, 1.0)
        assert mean == pytest.approx(-0.4, abs=1e-8)
        assert var == pytest.approx(0.0, abs=1e-8)

    @pytest.mark.parametrize("s,t", [(0.25, 1.0), (0.5, 0.75), (1.0, 3.0)])
    def test_brownian_markov(self, s, t):
        mean, var = conditional_law([s], [0.7], 0.5, t)
        assert mean == pytest.approx(0.7, rel=1e-12)
        assert var == pytest.approx(t - s, rel=1e-12)

    @pytest.mark.parametrize("H", [0.2, 0.7])
    def test_origin_carries_no_information(self, H):
        assert conditional_law([0.0], [0.0], H, 0.6) == (0.0, pytest.approx(0.6 ** (2 * H)))

    def test_empty_observations(self):
        with pytest.raises(InputError):
            conditional_law([], [], 0.3, 1.0)

    @settings(max_examples=30, deadline=None)
    @given(st.floats(0.05, 0.95), st.integers(1, 5), st.integers(2, 4))
    def test_sandwich_and_refinement(self, H, k, refine):
        n = 8
        s, t = k / n, 1.0
        coarse = np.arange(1, k + 1) / n
        fine = np.arange(1, k * refine + 1) / (n * refine)
        _, v_single = conditional_law([s], [0.0], H, t)
        _, v_coarse = conditional_law(coarse, np.zeros_like(coarse), H, t)
        _, v_fine = conditional_law(fine, np.zeros_like(fine), H, t)
        bound = (t - s) ** (2 * H)
        assert 0 < v_coarse <= bound * (1 + 1e-10)
        assert v_single <= bound * (1 + 1e-10)
        assert v_fine <= v_coarse * (1 + 1e-8)

    def test_rejects_high_hurst(self):
        with pytest.raises(UnsupportedParameterError):
            conditional_law([0.5], [0.1], 1.5, 1.0)
