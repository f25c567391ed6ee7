import math
import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from shl.lattice import KIND_EDGE, PeriodicGrid, lp_norm
from shl.stats import mean_ci, mixed_norm, moment_estimate, mu_d, rate_fit


class TestMoments:
    def test_constant_samples(self):
        est = moment_estimate(np.full(20, -1.5), 1.0)
        assert est.value == pytest.approx(2.25) and est.ci_low == est.ci_high == est.value

    def test_gaussian_second_and_fourth(self):
        x = np.random.default_rng(0).standard_normal(10**4)
        e1 = moment_estimate(x, 1.0, seed=1)
        assert e1.ci_low <= 1.0 <= e1.ci_high
        e2 = moment_estimate(x, 2.0, seed=1)
        assert e2.ci_low <= math.sqrt(3) <= e2.ci_high
        assert e2.raw == pytest.approx(e2.value**2)

    def test_needs_eight_samples(self):
        with pytest.raises(ValueError):
            moment_estimate(np.ones(7))

    def test_heavy_moment_warns(self):
        x = np.random.default_rng(1).standard_normal(64)
        assert moment_estimate(x, 8.0).warning is not None
        assert moment_estimate(x, 1.0).warning is None

    def test_seeded(self):
        x = np.random.default_rng(2).standard_normal(50)
        a, b = moment_estimate(x, 1.0, seed=5), moment_estimate(x, 1.0, seed=5)
        assert (a.ci_low, a.ci_high) == (b.ci_low, b.ci_high)

    @given(st.lists(st.floats(-1e3, 1e3, allow_nan=False), min_size=8, max_size=40), st.sampled_from([0.5, 1.0, 2.0]))
    def test_ci_brackets_value(self, xs, r):
        est = moment_estimate(xs, r)
        assert est.ci_low <= est.value <= est.ci_high

    def test_bootstrap_calibration(self):
        rng = np.random.default_rng(3)
        hits = 0
        trials = 200
        for t in range(trials):
            est = moment_estimate(rng.standard_normal(200), 1.0, seed=t)
            hits += est.ci_low <= 1.0 <= est.ci_high
        assert hits / trials >= 0.85

    def test_mean_ci(self):
        m, lo, hi = mean_ci([1.0, 2.0, 3.0])
        assert m == 2.0 and lo < 2.0 < hi
        assert mean_ci([4.0]) == (4.0, 4.0, 4.0)


class TestMixedNorm:
    def test_single_sample_reduces_to_lp(self):
        g = PeriodicGrid(2, 8, 0.5)
        u = np.random.default_rng(0).standard_normal(g.shape)
        assert mixed_norm(g, u[None], 3.0, 3.0) == pytest.approx(lp_norm(g, u, 3.0), rel=1e-13)
        with pytest.warns(RuntimeWarning):
            mixed_norm(g, u[None], 3.0, 2.0)

    def test_p_equals_r_direct_sum(self):
        g = PeriodicGrid(2, 8)
        s = np.random.default_rng(1).standard_normal((5, 2) + g.shape)
        mag = np.sqrt(np.sum(s**2, axis=1))
        ref = (np.sum(np.mean(mag**4, axis=0))) ** 0.25
        assert mixed_norm(g, s, 4.0, 4.0, kind=KIND_EDGE) == pytest.approx(ref, rel=1e-13)

    @given(st.integers(0, 10**6), st.floats(1.0, 6.0), st.floats(1.0, 6.0), st.floats(1.0, 6.0))
    def test_jensen_in_r(self, seed, p, r1, r2):
        g = PeriodicGrid(2, 4)
        s = np.random.default_rng(seed).standard_normal((6,) + g.shape)
        lo, hi = sorted((r1, r2))
        assert mixed_norm(g, s, p, lo) <= mixed_norm(g, s, p, hi) * (1 + 1e-12)

    @given(st.integers(0, 10**6), st.floats(1.0, 6.0), st.floats(1.0, 6.0), st.floats(1.0, 6.0))
    def test_power_mean_in_p(self, seed, r, p1, p2):
        g = PeriodicGrid(2, 4)
        s = np.random.default_rng(seed).standard_normal((6,) + g.shape)
        lo, hi = sorted((p1, p2))
        assert mixed_norm(g, s, lo, r, normalized=True) <= mixed_norm(g, s, hi, r, normalized=True) * (1 + 1e-12)

    def test_local_exponent(self):
        g = PeriodicGrid(2, 16, 0.25)
        s = np.random.default_rng(4).standard_normal((4,) + g.shape)
        v = mixed_norm(g, s, 2.0, 2.0, q=2.0)
        assert 0 < v <= mixed_norm(g, s, 2.0, 2.0) * (1 + 1e-12)
        with pytest.raises(ValueError):
            mixed_norm(PeriodicGrid(2, 8), s[:, :8, :8], 2.0, 2.0, q=2.0)


class TestRateFit:
    def test_exact_powers(self):
        eps = [1 / 8, 1 / 16, 1 / 32, 1 / 64]
        fit = rate_fit([(e, e) for e in eps], 1)
        assert fit.exponent == pytest.approx(1.0) and fit.r_squared == pytest.approx(1.0)
        assert rate_fit([(e, math.sqrt(e)) for e in eps], 1).exponent == pytest.approx(0.5)

    def test_log_correction_preferred(self):
        rng = np.random.default_rng(0)
        eps = 2.0 ** -np.arange(3, 9)
        vals = eps * np.sqrt(np.log(1 / eps + 2)) * (1 + 0.02 * rng.standard_normal(eps.size))
        fit = rate_fit(list(zip(eps, vals)), 2)
        assert fit.with_log_correction and fit.log_exponent == pytest.approx(1.0, abs=0.1)

    def test_pure_power_preferred(self):
        eps = 2.0 ** -np.arange(3, 9)
        fit = rate_fit(list(zip(eps, 3 * eps)), 2)
        assert not fit.with_log_correction and not fit.indistinguishable

    def test_weighted(self):
        eps = [1 / 8, 1 / 16, 1 / 32]
        fit = rate_fit([(e, e**0.7) for e in eps], 2, sigma=[0.01, 0.01, 0.01])
        assert fit.exponent == pytest.approx(0.7)

    def test_errors(self):
        with pytest.raises(ValueError):
            rate_fit([(0.1, 1.0), (0.05, 0.5)], 1)
        with pytest.raises(ValueError):
            rate_fit([(0.05, 1.0), (0.1, 0.5), (0.2, 0.3)], 1)
        with pytest.raises(ValueError):
            rate_fit([(0.1, 1.0), (0.05, -0.5), (0.02, 0.3)], 1)


def test_mu_d_monotone():
    r = np.linspace(0, 100, 11)
    assert np.all(np.diff(mu_d(r, 1)) > 0) and np.all(np.diff(mu_d(r, 2)) > 0)
