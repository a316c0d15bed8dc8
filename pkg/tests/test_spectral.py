import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from snlslab.errors import ConfigurationError
from snlslab.spectral import (
    Grid, derivative, free_propagate, gaussian, gaussian_free_solution, h1_norm, lp_norm, make_grid,
)

# sqrt(1.5 * sqrt(pi)): H^1 norm of exp(-x^2/2), computed with mpmath
GAUSSIAN_H1 = 1.6305461589167827


def _rel_l2(grid, a, b):
    return float(lp_norm(grid, a - b, 2) / lp_norm(grid, b, 2))


def _random_field(seed, n, smooth=True):
    r = np.random.default_rng(seed)
    hat = r.normal(size=n) + 1j * r.normal(size=n)
    if smooth:
        hat *= np.exp(-0.02 * np.fft.fftfreq(n, 1.0 / n) ** 2)
    return np.fft.ifft(hat)


class TestGrid:
    def test_spacing_and_wavenumbers(self):
        g = make_grid(16, 256)
        assert g.dx == 0.125
        assert g.k_max == pytest.approx(math.pi * 128 / 16, rel=1e-15)
        assert make_grid(32, 1024).dx == 0.0625

    @pytest.mark.parametrize("n", [255, 4, 0, 100])
    def test_rejects_non_power_of_two(self, n):
        with pytest.raises(ConfigurationError):
            make_grid(16, n)

    @pytest.mark.parametrize("L", [0.0, -1.0, float("nan"), float("inf")])
    def test_rejects_bad_half_width(self, L):
        with pytest.raises(ConfigurationError):
            make_grid(L, 64)

    @given(st.floats(0.5, 100.0), st.integers(3, 12))
    def test_dx_times_n_is_box_length(self, L, e):
        g = Grid(L, 2 ** e)
        assert g.dx * g.n_points == 2 * g.half_width

    def test_wavenumber_table(self):
        g = make_grid(8, 16)
        assert g.k[1] == pytest.approx(math.pi / 8)
        assert g.k[-1] == pytest.approx(-math.pi / 8)
        assert g.x[0] == -8 and g.x[-1] == pytest.approx(8 - g.dx)


class TestFreePropagate:
    def test_time_zero_identity(self, grid):
        u = _random_field(0, grid.n_points)
        assert np.array_equal(free_propagate(grid, u, 0.0), u)

    def test_gaussian_against_fourier_quadrature(self):
        g = make_grid(16, 512)
        t = 0.5
        xi = np.linspace(-14, 14, 8001)
        integrand = np.sqrt(2 * np.pi) * np.exp(-xi ** 2 / 2 - 1j * xi ** 2 * t)
        kernel = np.exp(1j * np.outer(g.x, xi))
        oracle = np.trapezoid(integrand * kernel, xi, axis=1) / (2 * np.pi)
        numeric = free_propagate(g, gaussian(g), t)
        assert _rel_l2(g, numeric, oracle) < 1e-8
        assert _rel_l2(g, gaussian_free_solution(g, t), oracle) < 1e-8

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2 ** 31), st.floats(-5.0, 5.0))
    def test_unitary(self, seed, t):
        g = make_grid(16, 128)
        u = _random_field(seed, g.n_points, smooth=False)
        before = lp_norm(g, u, 2)
        assert abs(lp_norm(g, free_propagate(g, u, t), 2) - before) <= 1e-12 * before

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2 ** 31), st.floats(-2.0, 2.0), st.floats(-2.0, 2.0))
    def test_group_law(self, seed, s, t):
        g = make_grid(16, 128)
        u = _random_field(seed, g.n_points)
        two = free_propagate(g, free_propagate(g, u, s), t)
        one = free_propagate(g, u, s + t)
        assert _rel_l2(g, two, one) <= 1e-12

    def test_batched_times(self, grid):
        u = gaussian(grid)
        ts = np.array([0.1, 0.2, 0.3])
        stack = free_propagate(grid, np.broadcast_to(u, (3, grid.n_points)), ts[:, None])
        for i, t in enumerate(ts):
            assert np.allclose(stack[i], free_propagate(grid, u, t), atol=1e-14)


class TestNorms:
    def test_constant_field(self, grid):
        assert lp_norm(grid, np.ones(grid.n_points), 2) == pytest.approx(math.sqrt(32), rel=1e-14)

    def test_single_cell(self, grid):
        u = np.zeros(grid.n_points)
        u[100] = 3.0
        assert lp_norm(grid, u, 10) == pytest.approx(3.0 * grid.dx ** 0.1, rel=1e-14)
        assert lp_norm(grid, u, np.inf) == 3.0

    def test_gaussian_l2(self):
        g = make_grid(16, 512)
        assert abs(lp_norm(g, gaussian(g), 2) - math.pi ** 0.25) < 1e-8

    @pytest.mark.parametrize("p", [0.5, -1, float("nan")])
    def test_rejects_small_exponent(self, grid, p):
        with pytest.raises(ConfigurationError):
            lp_norm(grid, np.ones(grid.n_points), p)

    def test_h1_zero(self, grid):
        assert h1_norm(grid, np.zeros(grid.n_points)) == 0

    def test_plane_wave_derivative(self):
        # e^{ix} is periodic on [-L, L) when L is a multiple of pi
        g = make_grid(4 * math.pi, 256)
        u = np.exp(1j * g.x)
        du = lp_norm(g, derivative(g, u), 2)
        assert abs(du - lp_norm(g, u, 2)) < 1e-6

    def test_gaussian_h1_against_finite_differences(self):
        g = make_grid(16, 512)
        h = 1e-3
        x = np.arange(-16, 16 + h / 2, h)
        f = np.exp(-x ** 2 / 2)
        df = np.zeros_like(f)
        df[2:-2] = (-f[4:] + 8 * f[3:-1] - 8 * f[1:-3] + f[:-4]) / (12 * h)
        oracle = math.sqrt(np.trapezoid(f ** 2 + df ** 2, x))
        assert abs(oracle - GAUSSIAN_H1) < 1e-10
        assert abs(h1_norm(g, gaussian(g)) - oracle) < 1e-8

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 2 ** 31))
    def test_gagliardo_nirenberg(self, seed):
        g = make_grid(16, 256)
        r = np.random.default_rng(seed)
        u = sum(gaussian(g, r.normal() + 1j * r.normal(), r.uniform(-4, 4), r.uniform(0.5, 2),
                         r.normal()) for _ in range(3))
        lhs = lp_norm(g, u, np.inf) ** 2
        rhs = 2 * lp_norm(g, u, 2) * lp_norm(g, derivative(g, u), 2)
        assert lhs <= rhs * (1 + 1e-6)


def test_dispersive_decay_constant():
    from snlslab.inequalities import compact_fields, dispersive_constant
    g = make_grid(32, 1024)
    consts = [dispersive_constant(g, f, t, 1.0) for _, f in compact_fields(g) for t in (0.1, 0.5, 1.0)]
    # the whole-line kernel constant is (4 pi)^(-1/2)
    assert max(consts) <= (4 * math.pi) ** -0.5 * 1.01
