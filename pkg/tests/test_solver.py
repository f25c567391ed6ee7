import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from shl.lattice import PeriodicGrid, divergence, gradient
from shl.randomfield import CoefficientField, CoefficientMap, CovarianceSpec, sample_coefficient
from shl.solver import (
    IncompatibleRHS,
    MassiveProblem,
    SolverConfig,
    SolverError,
    apriori_checks,
    meyers_iterate,
    relative_residual,
    solve,
    solve_constant,
    solve_variable,
    spd_margin,
)

Ts = [1.0, 16.0, 256.0, math.inf]


def _coef(d, n, lam=0.25, seed=3):
    g = PeriodicGrid(d, n)
    a, _ = sample_coefficient(g, CovarianceSpec(1.0, 1.0, d), CoefficientMap(lam), seed)
    return g, a


def _operator(g, a_vals, T, u):
    out = -divergence(g, a_vals * gradient(g, u))
    return out if math.isinf(T) else out + u / T


class TestConstant:
    @pytest.mark.parametrize("T", [1.0, 7.0, 1e6])
    def test_constant_g(self, T):
        g = PeriodicGrid(2, 8)
        s = solve_constant(g, 0.5 * np.eye(2), T, g=np.ones(g.shape))
        np.testing.assert_allclose(s.u, 1.0, atol=1e-13)

    def test_constant_f(self):
        g = PeriodicGrid(3, 4)
        f = np.broadcast_to(np.array([1.0, 2.0, 3.0]).reshape(3, 1, 1, 1), (3,) + g.shape)
        for T in (4.0, math.inf):
            assert np.max(np.abs(solve_constant(g, np.eye(3), T, f=f).u)) < 1e-14

    def test_single_mode_closed_form(self):
        g = PeriodicGrid(2, 16)
        A = np.array([[0.8, 0.1], [0.1, 0.5]])
        T = 3.0
        x = np.indices(g.shape)
        m = (2, 3)
        th = [2 * np.pi * mi / 16 for mi in m]
        f = np.zeros((2,) + g.shape)
        f[0] = np.cos(th[0] * x[0] + th[1] * x[1])
        s = solve_constant(g, A, T, f=f)
        # oracle: assemble the 2x2 real operator on the span of the cos/sin mode
        kap = [np.exp(1j * t) - 1 for t in th]
        sym = 1 / T + sum(np.conj(kap[j]) * A[j, k] * kap[k] for j in range(2) for k in range(2)).real
        # div f = D-_0 f_0 ; FFT(D- v) = -conj(kappa) FFT(v)
        phase = np.exp(1j * (th[0] * x[0] + th[1] * x[1]))
        u_ref = np.real(-np.conj(kap[0]) * phase / sym)
        np.testing.assert_allclose(s.u, u_ref, atol=1e-12)
        assert s.residual <= 1e-12

    def test_massless_rejects_mean(self):
        g = PeriodicGrid(2, 8)
        with pytest.raises(IncompatibleRHS):
            solve_constant(g, np.eye(2), math.inf, g=np.ones(g.shape))
        with pytest.raises(IncompatibleRHS):
            solve_variable(MassiveProblem(g, np.eye(2), math.inf, g=np.ones(g.shape)))

    def test_massless_returns_mean_zero(self, rng):
        g = PeriodicGrid(2, 8)
        f = rng.standard_normal((2,) + g.shape)
        assert abs(solve_constant(g, np.eye(2), math.inf, f=f).u.mean()) < 1e-15


class TestVariable:
    def test_identity_reduces_to_constant(self, rng):
        g = PeriodicGrid(2, 16)
        f = rng.standard_normal((2,) + g.shape)
        for T in (4.0, math.inf):
            ref = solve_constant(g, np.eye(2), T, f=f)
            cfg = SolverConfig(1e-10)
            vals = np.ones((2,) + g.shape)
            s = solve_variable(MassiveProblem(g, vals, T, f=f), cfg)
            assert np.linalg.norm(s.grad_u - ref.grad_u) <= 10 * cfg.tol * np.linalg.norm(f)

    def test_dispatch_uses_fft_for_constant_tensor(self, rng):
        g = PeriodicGrid(2, 8)
        f = rng.standard_normal((2,) + g.shape)
        s = solve(MassiveProblem(g, 0.5 * np.eye(2), 4.0, f=f))
        assert np.array_equal(s.u, solve_constant(g, 0.5 * np.eye(2), 4.0, f=f).u)

    def test_d1_harmonic_mean_oracle(self):
        g, a = _coef(1, 64, seed=1)
        s = solve_variable(MassiveProblem(g, a, math.inf, f=a.values.copy()))
        hm = 1.0 / np.mean(1.0 / a.values)
        assert np.max(np.abs(s.grad_u[0] - (hm / a.values[0] - 1.0))) <= 10 * 1e-10

    @given(st.integers(0, 10**6), st.sampled_from([1, 2, 3]), st.sampled_from(Ts))
    def test_residual_contract(self, seed, d, T):
        g, a = _coef(d, 8 if d == 3 else 16, seed=seed)
        rng = np.random.default_rng(seed)
        f = rng.standard_normal((d,) + g.shape)
        gg = rng.standard_normal(g.shape)
        if math.isinf(T):
            gg -= gg.mean()
        p = MassiveProblem(g, a, T, g=gg, f=f)
        s = solve_variable(p)
        assert s.residual <= 1e-10
        assert relative_residual(g, p.coefficient(), T, s.u, p.rhs()) <= 1e-10
        np.testing.assert_allclose(s.grad_u, gradient(g, s.u), atol=1e-14)

    def test_iteration_counts_bounded_in_T(self, rng):
        g, a = _coef(2, 32)
        f = rng.standard_normal((2,) + g.shape)
        its = [solve_variable(MassiveProblem(g, a, T, f=f)).iterations for T in Ts]
        assert max(its) <= 2 * min(its) + 5

    def test_deterministic(self, rng):
        g, a = _coef(2, 16)
        f = rng.standard_normal((2,) + g.shape)
        s1 = solve_variable(MassiveProblem(g, a, 8.0, f=f))
        s2 = solve_variable(MassiveProblem(g, a, 8.0, f=f))
        assert s1.iterations == s2.iterations and np.array_equal(s1.u, s2.u)

    def test_batched_matches_single(self, rng):
        g, a = _coef(2, 16)
        f = rng.standard_normal((3, 2) + g.shape)
        sb = solve_variable(MassiveProblem(g, a, math.inf, f=f))
        for b in range(3):
            s = solve_variable(MassiveProblem(g, a, math.inf, f=f[b]))
            assert np.linalg.norm(sb.grad_u[b] - s.grad_u) <= 1e-9 * np.linalg.norm(f[b])

    def test_max_iter_error_carries_best(self, rng):
        g, a = _coef(2, 32, lam=0.1)
        f = rng.standard_normal((2,) + g.shape)
        with pytest.raises(SolverError) as info:
            solve_variable(MassiveProblem(g, a, math.inf, f=f), SolverConfig(1e-14, max_iter=2))
        assert info.value.best is not None and info.value.residual > 1e-14

    def test_config_validation(self):
        with pytest.raises(ValueError):
            SolverConfig(tol=0)
        with pytest.raises(ValueError):
            SolverConfig(method="gmres")
        with pytest.raises(ValueError):
            MassiveProblem(PeriodicGrid(1, 8), 1.0, T=0.5)


class TestMeyers:
    def test_identity_one_step(self, rng):
        g = PeriodicGrid(2, 16)
        f = rng.standard_normal((2,) + g.shape)
        s = meyers_iterate(MassiveProblem(g, np.ones((2,) + g.shape), 4.0, f=f))
        assert s.iterations <= 2
        ref = solve_constant(g, np.eye(2), 4.0, f=f)
        assert np.max(np.abs(s.u - ref.u)) < 1e-12

    @pytest.mark.parametrize("lam", [0.25, 0.5, 0.75])
    def test_contraction_bound(self, lam, rng):
        g, a = _coef(2, 32, lam=lam)
        f = rng.standard_normal((2,) + g.shape)
        s = meyers_iterate(MassiveProblem(g, a, 16.0, f=f))
        assert s.contraction_estimate <= math.sqrt(1 - lam) + 0.05

    @given(st.integers(0, 10**6), st.sampled_from([1, 2]), st.sampled_from([0.1, 0.25, 0.5]), st.sampled_from(Ts))
    def test_agrees_with_pcg(self, seed, d, lam, T):
        g, a = _coef(d, 16, lam=lam, seed=seed)
        f = np.random.default_rng(seed).standard_normal((d,) + g.shape)
        cfg = SolverConfig(1e-10)
        p = MassiveProblem(g, a, T, f=f)
        sp, sm = solve_variable(p, cfg), meyers_iterate(p, cfg)
        assert np.linalg.norm(sp.grad_u - sm.grad_u) <= 10 * cfg.tol * np.linalg.norm(f)


class TestApriori:
    def test_zero_data(self):
        g, a = _coef(2, 16)
        p = MassiveProblem(g, a, 4.0, g=np.zeros(g.shape), f=np.zeros((2,) + g.shape))
        s = solve_variable(p)
        rep = apriori_checks(s, p, 4.0)
        assert rep.energy_ratio == 0.0 and rep.caccioppoli_ratio == 0.0

    def test_radius_limit(self):
        g, a = _coef(2, 16)
        p = MassiveProblem(g, a, 4.0, f=np.ones((2,) + g.shape))
        with pytest.raises(ValueError):
            apriori_checks(solve_variable(p), p, 5.0)

    def test_identity_single_mode_energy(self):
        # a = Id, f = single mode: energy ratio = |kappa|^2 / (1/T + |kappa|^2) |D-|^2 ... bounded by 1
        g = PeriodicGrid(2, 16)
        x = np.indices(g.shape)
        f = np.zeros((2,) + g.shape)
        f[0] = np.cos(2 * np.pi * x[0] / 16)
        for T in (1.0, 16.0, math.inf):
            p = MassiveProblem(g, np.ones((2,) + g.shape), T, f=f)
            rep = apriori_checks(solve_variable(p), p, 4.0)
            assert 0 < rep.energy_ratio <= 1.0 + 1e-12
            assert np.isfinite(rep.caccioppoli_ratio)

    def test_energy_ratio_fuzz(self):
        for seed in range(8):
            g, a = _coef(2, 16, lam=0.25, seed=seed)
            rng = np.random.default_rng(seed)
            p = MassiveProblem(g, a, 8.0, g=rng.standard_normal(g.shape), f=rng.standard_normal((2,) + g.shape))
            assert apriori_checks(solve_variable(p), p, 4.0).energy_ratio <= 4 / 0.25**2


@given(st.integers(0, 10**6), st.sampled_from([1, 2, 3]), st.sampled_from(Ts))
def test_spd_margin_nonnegative(seed, d, T):
    g, a = _coef(d, 8, seed=seed)
    v = np.random.default_rng(seed).standard_normal(g.shape)
    assert spd_margin(g, a, T, v) >= -1e-10


def test_operator_matches_direct_assembly(rng):
    from shl.solver import Coefficient, apply_operator

    g, a = _coef(2, 8)
    u = rng.standard_normal(g.shape)
    np.testing.assert_allclose(apply_operator(g, Coefficient(g, a), 4.0, u), _operator(g, a.values, 4.0, u), atol=1e-13)
