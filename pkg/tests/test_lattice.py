import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from shl.lattice import (
    KIND_EDGE,
    KIND_PLAQUETTE,
    KIND_SCALAR,
    Box,
    EdgeField,
    PeriodicGrid,
    PlaquetteField,
    ScalarField,
    box_average,
    curl,
    divergence,
    divergence_tensor,
    fft,
    full_to_skew,
    gradient,
    ifft,
    inner,
    laplacian,
    lp_norm,
    shift,
    shifted_product,
    site_product,
    skew_flux,
    skew_to_full,
    solve_shifted_laplacian,
)

grids = st.builds(
    PeriodicGrid,
    d=st.sampled_from([1, 2, 3]),
    n=st.sampled_from([4, 8]),
    h=st.sampled_from([1.0, 0.5, 0.25]),
)
seeds = st.integers(0, 2**32 - 1)


def _scalar(grid, rng, batch=()):
    return rng.standard_normal(batch + grid.shape)


def _edge(grid, rng, batch=()):
    return rng.standard_normal(batch + (grid.d,) + grid.shape)


def _plaq(grid, rng):
    return rng.standard_normal((grid.n_pairs,) + grid.shape)


class TestGrid:
    def test_rejects_bad_sizes(self):
        for d, n in [(4, 8), (2, 6), (2, 2)]:
            with pytest.raises(ValueError):
                PeriodicGrid(d, n)
        with pytest.raises(ValueError):
            PeriodicGrid(2, 8, 0.0)

    def test_geometry(self):
        g = PeriodicGrid(3, 8, 0.5)
        assert g.L == 4.0 and g.size == 512 and g.volume == 64.0
        assert g.pairs == [(0, 1), (0, 2), (1, 2)]
        assert g.edge_coordinates()[1, :, 0, 0, 0].tolist() == [0.0, 0.25, 0.0]


class TestFields:
    def test_value_counts(self):
        g = PeriodicGrid(3, 4)
        assert ScalarField(g, np.zeros(64)).values.shape == (4, 4, 4)
        assert EdgeField(g, np.zeros(3 * 64)).values.shape == (3, 4, 4, 4)
        assert PlaquetteField(g, np.zeros(3 * 64)).values.shape == (3, 4, 4, 4)
        with pytest.raises(ValueError):
            EdgeField(g, np.zeros(64))

    def test_finite_and_immutable(self):
        g = PeriodicGrid(1, 4)
        with pytest.raises(ValueError):
            ScalarField(g, [0, 1, np.nan, 0])
        f = ScalarField(g, [0, 1, 2, 3])
        with pytest.raises(ValueError):
            f.values[0] = 1.0

    @given(grids, seeds)
    def test_skew_roundtrip(self, g, seed):
        s = _plaq(g, np.random.default_rng(seed))
        full = skew_to_full(g, s)
        assert np.array_equal(full, -np.swapaxes(full, 0, 1))
        assert np.array_equal(full_to_skew(g, full), s)


class TestGradient:
    def test_constant(self):
        g = PeriodicGrid(2, 8)
        assert np.all(gradient(g, np.full(g.shape, 5.0)) == 0)

    def test_d1_example(self):
        g = PeriodicGrid(1, 4)
        assert gradient(g, np.array([0.0, 1.0, 0.0, 1.0]))[0].tolist() == [1, -1, 1, -1]

    def test_divergence_of_constant(self):
        g = PeriodicGrid(3, 4)
        F = np.broadcast_to(np.array([1.0, -2.0, 3.0]).reshape(3, 1, 1, 1), (3,) + g.shape)
        assert np.all(divergence(g, F) == 0)

    @given(grids, seeds)
    def test_adjointness(self, g, seed):
        rng = np.random.default_rng(seed)
        u, F = _scalar(g, rng), _edge(g, rng)
        lhs = inner(g, F, gradient(g, u)) + inner(g, divergence(g, F), u)
        scale = np.sqrt(inner(g, F, F) * inner(g, u, u))
        assert abs(lhs) <= 1e-12 * scale * max(1.0, 1.0 / g.h)

    def test_adjointness_direct_summation(self, rng):
        # loop-level oracle independent of the vectorized operators
        g = PeriodicGrid(2, 4)
        u, F = _scalar(g, rng), _edge(g, rng)
        total = 0.0
        for x in range(4):
            for y in range(4):
                total += F[0, x, y] * (u[(x + 1) % 4, y] - u[x, y])
                total += F[1, x, y] * (u[x, (y + 1) % 4] - u[x, y])
                div = F[0, x, y] - F[0, x - 1, y] + F[1, x, y] - F[1, x, y - 1]
                total += div * u[x, y]
        assert abs(total) < 1e-12

    @given(grids, seeds)
    def test_gradient_has_zero_mean_and_divergence_sums_to_zero(self, g, seed):
        u = _scalar(g, np.random.default_rng(seed))
        grad = gradient(g, u)
        assert np.all(np.abs(grad.sum(axis=tuple(range(1, g.d + 1)))) < 1e-12 * g.size / g.h)
        assert abs(divergence(g, grad).sum()) < 1e-11 * g.size / g.h**2

    @given(grids, seeds)
    def test_div_grad_is_standard_stencil(self, g, seed):
        u = _scalar(g, np.random.default_rng(seed))
        ref = -2 * g.d * u
        for j in range(g.d):
            ref = ref + np.roll(u, 1, axis=j) + np.roll(u, -1, axis=j)
        ref /= g.h**2
        np.testing.assert_allclose(divergence(g, gradient(g, u)), ref, atol=1e-12 / g.h**2)
        np.testing.assert_allclose(laplacian(g, u), ref, atol=1e-12 / g.h**2)

    def test_batched(self, rng):
        g = PeriodicGrid(2, 8)
        u = _scalar(g, rng, (3,))
        G = gradient(g, u)
        assert G.shape == (3, 2, 8, 8)
        assert np.array_equal(G[1], gradient(g, u[1]))


class TestCurlAndTensorDivergence:
    @given(grids, seeds)
    def test_curl_of_gradient_vanishes(self, g, seed):
        u = _scalar(g, np.random.default_rng(seed))
        assert np.max(np.abs(curl(g, gradient(g, u))), initial=0.0) < 1e-12 / g.h**2

    def test_curl_of_constant(self):
        g = PeriodicGrid(3, 4)
        q = np.ones((3,) + g.shape)
        assert np.all(curl(g, q) == 0)

    def test_curl_single_mode_stencil(self):
        g = PeriodicGrid(2, 8)
        x, y = np.indices(g.shape)
        q = np.stack([np.cos(2 * np.pi * y / 8), np.zeros(g.shape)])
        # (curl q)_01 = D+_0 q_1 - D+_1 q_0 = -(cos(2pi(y+1)/8) - cos(2pi y/8))
        ref = -(np.cos(2 * np.pi * (y + 1) / 8) - np.cos(2 * np.pi * y / 8))
        np.testing.assert_allclose(curl(g, q)[0], ref, atol=1e-15)

    def test_tensor_divergence_zero(self):
        g = PeriodicGrid(3, 4)
        assert np.all(divergence_tensor(g, np.zeros((3,) + g.shape)) == 0)

    @given(grids, seeds)
    def test_div_div_sigma_vanishes(self, g, seed):
        s = _plaq(g, np.random.default_rng(seed))
        assert np.max(np.abs(divergence(g, divergence_tensor(g, s)))) < 1e-12 / g.h**2

    def test_tensor_divergence_stencil(self, rng):
        g = PeriodicGrid(3, 4)
        s = _plaq(g, rng)
        full = skew_to_full(g, s)
        ref = np.zeros((3,) + g.shape)
        for j in range(3):
            for k in range(3):
                ref[j] += full[j, k] - np.roll(full[j, k], 1, axis=k)
        np.testing.assert_allclose(divergence_tensor(g, s), ref, atol=1e-14)


class TestProductRules:
    @given(grids, seeds)
    def test_leibniz(self, g, seed):
        rng = np.random.default_rng(seed)
        phi, psi = _scalar(g, rng), _scalar(g, rng)
        lhs = gradient(g, phi * psi)
        rhs = shifted_product(g, phi, gradient(g, psi)) + site_product(g, psi, gradient(g, phi))
        np.testing.assert_allclose(lhs, rhs, atol=1e-12 / g.h)

    @given(grids, seeds)
    def test_skew_flux_identity(self, g, seed):
        rng = np.random.default_rng(seed)
        s, v = _plaq(g, rng), _scalar(g, rng)
        lhs = divergence(g, site_product(g, v, divergence_tensor(g, s)))
        rhs = -divergence(g, skew_flux(g, s, v))
        np.testing.assert_allclose(lhs, rhs, atol=1e-11 / g.h**2)

    def test_skew_flux_of_constant_is_zero(self, rng):
        g = PeriodicGrid(2, 8)
        assert np.allclose(skew_flux(g, _plaq(g, rng), np.full(g.shape, 3.0)), 0, atol=1e-14)


class TestNorms:
    @pytest.mark.parametrize("p", [1.0, 2.0, 3.5])
    def test_constant_field(self, p):
        g = PeriodicGrid(2, 8, 0.5)
        assert lp_norm(g, np.full(g.shape, -2.0), p) == pytest.approx(2.0 * g.volume ** (1 / p), rel=1e-14)

    def test_sup_norm(self):
        g = PeriodicGrid(1, 4)
        assert lp_norm(g, np.array([1.0, -3.0, 2.0, 0.0]), np.inf) == 3.0

    def test_parseval_single_mode(self):
        g = PeriodicGrid(2, 16, 0.5)
        x = g.coordinates()
        A = 1.7
        u = A * np.cos(2 * np.pi * 3 * x[0] / g.L)
        assert lp_norm(g, u, 2) == pytest.approx(A * np.sqrt(g.volume / 2), rel=1e-13)

    def test_edge_norm_is_pointwise_euclidean(self):
        g = PeriodicGrid(2, 4)
        F = np.zeros((2,) + g.shape)
        F[0], F[1] = 3.0, 4.0
        assert lp_norm(g, F, np.inf, kind=KIND_EDGE) == 5.0

    def test_bad_p_and_empty_box(self):
        g = PeriodicGrid(2, 4)
        with pytest.raises(ValueError):
            lp_norm(g, np.zeros(g.shape), 0.5)
        with pytest.raises(ValueError):
            box_average(g, np.zeros(g.shape), Box((0, 0), -1.0))

    def test_box(self):
        g = PeriodicGrid(2, 8, 0.5)
        b = Box((0, 0), 1.0)
        assert b.count(g) == 25 and b.volume(g) == 25 * 0.25
        u = np.zeros(g.shape)
        u[0, 0] = 25.0
        assert box_average(g, u, b) == pytest.approx(1.0)
        with pytest.raises(ValueError):
            Box((0, 0), 4.0).index(g)

    def test_plaquette_norm_kind(self, rng):
        g = PeriodicGrid(3, 4)
        s = _plaq(g, rng)
        assert lp_norm(g, s, 2, kind=KIND_PLAQUETTE) == pytest.approx(np.sqrt(np.sum(s**2)))
        assert lp_norm(g, s[0], 2, kind=KIND_SCALAR) == pytest.approx(np.sqrt(np.sum(s[0] ** 2)))


class TestFourier:
    @given(grids, seeds)
    def test_gradient_symbol(self, g, seed):
        u = _scalar(g, np.random.default_rng(seed))
        U = fft(g, u)
        for j in range(g.d):
            np.testing.assert_allclose(fft(g, gradient(g, u)[j]), g.symbols.kappa[j] * U, atol=1e-9 * g.size / g.h)
        np.testing.assert_allclose(ifft(g, U), u, atol=1e-12)

    @given(grids, seeds, st.sampled_from([0.0, 0.1, 3.0]))
    def test_shifted_laplacian_solve(self, g, seed, mass):
        rhs = _scalar(g, np.random.default_rng(seed))
        if mass == 0.0:
            rhs -= rhs.mean()
        x = solve_shifted_laplacian(g, rhs, mass)
        np.testing.assert_allclose(mass * x - laplacian(g, x), rhs, atol=1e-10)

    @given(grids, seeds)
    def test_constant_operator_symbol(self, g, seed):
        from shl.lattice import apply_constant_tensor

        rng = np.random.default_rng(seed)
        B = rng.standard_normal((g.d, g.d))
        A = B @ B.T + np.eye(g.d)
        u = _scalar(g, rng)
        lhs = fft(g, -divergence(g, apply_constant_tensor(g, A, gradient(g, u))))
        np.testing.assert_allclose(lhs, g.symbols.constant_operator(A) * fft(g, u), atol=1e-8 * g.size / g.h**2)


def test_shift_is_periodic(rng):
    g = PeriodicGrid(2, 8)
    u = _scalar(g, rng)
    assert np.array_equal(shift(g, u, 1, 8), u)
    assert shift(g, u, 0)[0, 0] == u[1, 0]
