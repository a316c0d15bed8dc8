import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from snlslab.dynamics import SolverConfig, Trajectory, evolve
from snlslab.functionals import (
    StochasticIntegrals, build_dissection, correction_integral, correction_series, dissect,
    maximal_Q_star, norms_from_series, q_star_x2_fifth, spacetime_norms, stochastic_convolution,
)
from snlslab.noise import BrownianPath, build_noise_model, hermite_modes
from snlslab.spectral import free_propagate, gaussian, lp_norm, make_grid

# ((pi/5)^(1/4) * pi/8)^(1/5): X2 norm of the free Gaussian exp(-x^2/2) on [0, 1/2]
FREE_GAUSSIAN_X2 = 0.8104401916114315


def constant_trajectory(grid, u0, dt=0.01, horizon=1.0, noise_on=False):
    cfg = SolverConfig(dt=dt, horizon=horizon, noise_on=noise_on)
    n = cfg.n_steps
    snaps = np.repeat(u0[None, :], n + 1, axis=0)
    l2 = np.full(n + 1, float(lp_norm(grid, u0, 2)))
    l10 = np.full(n + 1, float(lp_norm(grid, u0, 10)))
    return Trajectory(grid, cfg, np.arange(n + 1), snaps, l2, l10, np.ones(n + 1),
                      np.concatenate([[0.0], np.cumsum(l10[:-1] ** 5 * dt)]))


def free_x2(n_points, dt):
    g = make_grid(16, n_points)
    cfg = SolverConfig(dt=dt, horizon=0.5, noise_on=False, nonlinearity=0.0)
    return spacetime_norms(evolve(gaussian(g), cfg, grid=g, snapshot_stride=10 ** 6)).x2


class TestSpaceTimeNorms:
    def test_constant_in_time(self, grid):
        u0 = gaussian(grid, 0.3, 1.0)
        n = spacetime_norms(constant_trajectory(grid, u0))
        assert n.x1 == lp_norm(grid, u0, 2)
        assert n.x2 == pytest.approx(float(lp_norm(grid, u0, 10)), rel=1e-13)
        assert n.x == n.x1 + n.x2

    def test_zero(self, grid):
        n = spacetime_norms(constant_trajectory(grid, np.zeros(grid.n_points, complex)))
        assert (n.x1, n.x2, n.x) == (0.0, 0.0, 0.0)

    def test_empty_interval(self, grid):
        n = spacetime_norms(constant_trajectory(grid, gaussian(grid)), 0.3, 0.3)
        assert n.x1 == 0 and n.x2 == 0

    def test_free_gaussian_against_refined_quadrature(self):
        coarse = free_x2(256, 1e-3)
        fine = free_x2(512, 5e-4)
        assert abs(coarse - fine) / fine <= 1e-4
        # left-endpoint error is first order in dt, so extrapolate the fifth powers
        richardson = (2 * fine ** 5 - coarse ** 5) ** 0.2
        assert abs(richardson - FREE_GAUSSIAN_X2) <= 1e-6

    @settings(max_examples=40, deadline=None)
    @given(st.lists(st.floats(0, 3), min_size=4, max_size=60), st.data())
    def test_x2_additivity(self, l10, data):
        l10 = np.array(l10)
        n = len(l10) - 1
        b = data.draw(st.integers(0, n))
        a = data.draw(st.integers(0, b))
        c = data.draw(st.integers(b, n))
        l2 = np.ones_like(l10)
        whole = norms_from_series(l2, l10, 0.01, a, c).x2 ** 5
        parts = norms_from_series(l2, l10, 0.01, a, b).x2 ** 5 + norms_from_series(l2, l10, 0.01, b, c).x2 ** 5
        assert whole == pytest.approx(parts, rel=1e-12, abs=1e-300)

    def test_sobolev_norm(self, grid):
        u0 = gaussian(grid)
        n = spacetime_norms(constant_trajectory(grid, u0), sobolev=True)
        assert n.sobolev > n.x


class TestStochasticConvolution:
    def _setup(self, grid, model, n_steps=20):
        cfg = SolverConfig(dt=1e-3, horizon=n_steps * 1e-3)
        path = BrownianPath(4, 0, model.n_modes, cfg.dt, cfg.n_steps)
        traj = evolve(gaussian(grid, 0.1), cfg, model, path)
        return traj, path

    def test_empty_range(self, grid, model):
        traj, path = self._setup(grid, model)
        assert np.all(stochastic_convolution(traj, model, path, 0.005, 0.005, 0.01) == 0)

    def test_single_step_single_mode(self, grid):
        m = build_noise_model(grid, [(0.5, {"name": "gaussian"})])
        traj, path = self._setup(grid, m)
        s0 = 0.003
        out = stochastic_convolution(traj, m, path, s0, s0 + 1e-3, 0.01)
        direct = free_propagate(grid, traj.snapshot_at(s0) * 0.5 * np.exp(-grid.x ** 2)
                                * path.increments[0, 3], 0.01 - s0)
        assert np.allclose(out, direct, rtol=0, atol=1e-15)

    def test_zero_mean(self):
        g = make_grid(8, 64)
        m = build_noise_model(g, hermite_modes(2, scale=1.0))
        cfg = SolverConfig(dt=0.01, horizon=0.04, noise_on=False)
        sigma = evolve(gaussian(g), cfg, grid=g)
        # same deterministic integrand for every path
        traj = Trajectory(g, cfg.with_(noise_on=True), sigma.snapshot_steps, sigma.snapshots,
                          sigma.l2, sigma.l10, sigma.theta, sigma.x2_acc)
        n = 10_000
        samples = np.array([stochastic_convolution(traj, m, BrownianPath(0, p, 2, 0.01, 4), 0.0, 0.04, 0.04)
                            for p in range(n)])
        mean = samples.mean(axis=0)
        se = np.sqrt(samples.real.var(axis=0, ddof=1) + samples.imag.var(axis=0, ddof=1)) / math.sqrt(n)
        assert lp_norm(g, mean, 2) <= 3 * lp_norm(g, se, 2)


class TestQStar:
    def test_noise_off(self, grid, model):
        cfg = SolverConfig(dt=1e-3, horizon=0.02, noise_on=False)
        traj = evolve(gaussian(grid, 0.1), cfg, grid=grid)
        path = BrownianPath(0, 0, model.n_modes, cfg.dt, cfg.n_steps)
        assert maximal_Q_star(traj, model, path, 0.02) == 0.0

    def test_time_zero(self, grid, model):
        cfg = SolverConfig(dt=1e-3, horizon=0.02)
        path = BrownianPath(0, 0, model.n_modes, cfg.dt, cfg.n_steps)
        traj = evolve(gaussian(grid, 0.1), cfg, model, path)
        assert maximal_Q_star(traj, model, path, 0.0) == 0.0

    def test_sup_dominates_members(self, grid, model):
        cfg = SolverConfig(dt=1e-3, horizon=0.03)
        path = BrownianPath(2, 1, model.n_modes, cfg.dt, cfg.n_steps)
        traj = evolve(gaussian(grid, 0.1), cfg, model, path)
        si = StochasticIntegrals(traj, model, path)
        it = 30
        pair_sup = si.q_star_pairs(it)
        for r1, r2 in [(0, 30), (5, 17), (12, 13), (0, 1)]:
            member = float(lp_norm(grid, si.integral(r1 * 1e-3, r2 * 1e-3, 0.03), 10))
            assert member <= pair_sup * (1 + 1e-12)
        assert pair_sup <= si.q_star(it) * (1 + 1e-12)


class TestDissection:
    def test_small_integral(self):
        d = dissect(np.full(101, 0.5), 0.005)
        assert d.count == 1
        assert d.breakpoints[-1] == pytest.approx(0.5)

    def test_noise_off(self, grid, model):
        cfg = SolverConfig(dt=1e-3, horizon=0.05, noise_on=False)
        traj = evolve(gaussian(grid, 0.1), cfg, grid=grid)
        path = BrownianPath(0, 0, model.n_modes, cfg.dt, cfg.n_steps)
        assert build_dissection(traj, model, path).count == 1

    def test_constant_integrand(self):
        # c^5 T0 = 3.2 with T0 = 0.5: crossings at k / c^5 = 0.15625 k
        c = 6.4 ** 0.2
        dt = 0.5 / 3200
        d = dissect(np.full(3201, c), dt)
        assert d.count == 4
        assert np.allclose(d.breakpoints, [0, 0.15625, 0.3125, 0.46875, 0.5], atol=dt)
        assert np.allclose(d.interval_integrals, [1, 1, 1, 0.2], atol=2 * 6.4 * dt)

    @settings(max_examples=60, deadline=None)
    @given(st.lists(st.floats(0, 4), min_size=2, max_size=300), st.floats(1e-3, 0.1))
    def test_invariants(self, q, dt):
        q = np.array(q)
        n = len(q) - 1
        d = dissect(q, dt)
        steps = d.breakpoint_steps
        assert steps[0] == 0 and steps[-1] == n
        assert np.all(np.diff(steps) > 0)
        for k in range(d.count - 1):
            a, b = steps[k], steps[k + 1]
            assert np.sum(q[a:b] ** 5) * dt >= 1.0 * (1 - 1e-12)
            assert np.sum(q[a:b - 1] ** 5) * dt < 1.0
        bound = d.count_bound(q_star_x2_fifth(q, dt))
        assert d.count <= bound
        assert d.count <= max(1, math.ceil(2 * q_star_x2_fifth(q, dt))) + 1

    def test_bound_on_simulated_paths(self, grid, model):
        strong = model.scaled(3.0)
        cfg = SolverConfig(dt=1e-3, horizon=0.1)
        u0 = gaussian(grid)
        u0 /= lp_norm(grid, u0, 2)
        counts = []
        for p in range(4):
            path = BrownianPath(9, p, model.n_modes, cfg.dt, cfg.n_steps)
            traj = evolve(10 * u0, cfg, strong, path)
            q = StochasticIntegrals(traj, strong, path).q_star_series()
            d = build_dissection(traj, strong, path, q_values=q)
            counts.append(d.count)
            assert d.count <= d.count_bound(q_star_x2_fifth(q, cfg.dt))
        assert max(counts) > 1


class TestCorrection:
    def test_zero_correction(self, grid):
        m = build_noise_model(grid, [])
        traj = constant_trajectory(grid, gaussian(grid))
        assert np.all(correction_integral(traj, m, 0.0, 0.5) == 0)

    def test_empty_interval(self, grid, model):
        traj = constant_trajectory(grid, gaussian(grid))
        assert np.all(correction_integral(traj, model, 0.3, 0.3) == 0)

    def test_series_matches_single_evaluation(self, grid, model):
        traj = constant_trajectory(grid, gaussian(grid, 1.0, 0.5))
        series = correction_series(traj, model, 0.2, 0.6)
        assert np.allclose(series[-1], correction_integral(traj, model, 0.2, 0.6), atol=1e-14)

    def test_x1_bound_with_single_constant(self, grid, model):
        u0 = gaussian(grid, 1.0, 0.5)
        traj = constant_trajectory(grid, u0)
        fmax = float(model.correction.max())
        consts = []
        for a, b in [(0.0, 0.1), (0.0, 0.5), (0.2, 0.9), (0.5, 1.0)]:
            x1 = float(lp_norm(grid, correction_series(traj, model, a, b), 2).max())
            consts.append(x1 / ((b - a) * fmax * float(lp_norm(grid, u0, 2))))
        # Minkowski in time with a unitary propagator gives C <= 1
        assert max(consts) <= 1.0 + 1e-12
        assert max(consts) / min(consts) < 1.5


def test_burkholder_ratios():
    from snlslab.inequalities import Resolution, StochasticSetup, burkholder_constants
    res = Resolution(dt=5e-3, horizon=0.25, n_points=128)
    m = build_noise_model(res.grid, hermite_modes(4))
    out = burkholder_constants(res, m, setup=StochasticSetup(n_paths=60))
    for (p, rho), (lhs, rhs) in out.items():
        assert math.isfinite(lhs) and rhs > 0
        assert lhs <= rho * rhs
    lhs, rhs = out[(2.0, 2.0)]
    # Doob's maximal inequality in the Hilbert space L^2
    assert lhs <= 2 * rhs
