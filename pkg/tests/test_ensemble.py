import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from snlslab.dynamics import SolverConfig, evolve
from snlslab.ensemble import (
    EnsembleResult, InitialDataSpec, PathRecord, convergence_in_eps, convergence_in_m, h1_seminorm,
    moment_norm, mollifier_derivative_l1, mollifier_kernel, mollify_initial_data,
    perturbation_direction, persistence_experiment, ratio_moment, run_ensemble, simulate_group,
    stability_experiment, uniform_bound_sweep,
)
from snlslab.errors import ConfigurationError, ContractViolation
from snlslab.functionals import spacetime_norms
from snlslab.noise import build_noise_model, hermite_modes
from snlslab.spectral import gaussian, h1_norm, lp_norm, make_grid

GRID = make_grid(16, 128)
MODEL = build_noise_model(GRID, hermite_modes(3))
CFG = SolverConfig(dt=2e-3, horizon=0.2)
SPEC = InitialDataSpec(mass=0.1)


class TestMoments:
    def test_constant_samples(self):
        assert moment_norm([1, 1, 1], 5).value == 1.0

    def test_hand_value(self):
        assert moment_norm([0, 2], 2).value == pytest.approx(math.sqrt(2), rel=1e-15)

    def test_rejects_empty_and_negative(self):
        with pytest.raises(ConfigurationError):
            moment_norm([], 2)
        with pytest.raises(ContractViolation):
            moment_norm([1.0, -1.0], 2)
        with pytest.raises(ConfigurationError):
            moment_norm([1.0], 0.5)

    @pytest.mark.parametrize("rho", [2.0, 5.0, 8.0])
    def test_lognormal_closed_form(self, rho):
        # sigma small enough that the rho-tilted tail is sampled at n = 2e4
        s = 0.25
        x = np.exp(np.random.default_rng(11).normal(0.0, s, 20_000))
        est = moment_norm(x, rho, seed=3)
        exact = math.exp(rho * s * s / 2)
        assert est.lo <= exact <= est.hi

    @settings(max_examples=30, deadline=None)
    @given(st.lists(st.floats(0, 100), min_size=1, max_size=40), st.floats(1, 30))
    def test_interval_brackets_value(self, xs, rho):
        est = moment_norm(xs, rho, n_boot=200)
        assert est.lo <= est.value <= est.hi
        assert est.value <= max(xs) * (1 + 1e-12)

    def test_ratio_of_zero_numerator(self):
        assert ratio_moment([0, 0], [1, 2], 6).value == 0.0


class TestInitialData:
    def test_small_data_threshold(self):
        with pytest.raises(ConfigurationError):
            InitialDataSpec(mass=0.2, delta0=0.1)
        InitialDataSpec(mass=0.2, delta0=0.1, small_data=False)

    @pytest.mark.parametrize("family", ["gaussian", "multi_bump", "random_phase"])
    def test_realized_mass_below_delta0(self, family):
        spec = InitialDataSpec(family=family, mass=0.1, randomize=True, amplitude_spread=0.5)
        masses = [lp_norm(GRID, spec.realize(GRID, p, 3), 2) for p in range(20)]
        assert max(masses) <= 0.1 * (1 + 1e-12)
        assert len(set(np.round(masses, 12))) > 1

    def test_keyed_draws(self):
        spec = InitialDataSpec(randomize=True)
        assert np.array_equal(spec.realize(GRID, 4, 1), spec.realize(GRID, 4, 1))
        assert not np.array_equal(spec.realize(GRID, 4, 1), spec.realize(GRID, 5, 1))

    def test_perturbation_is_unit(self):
        w = perturbation_direction(GRID, 3, 0)
        assert lp_norm(GRID, w, 2) == pytest.approx(1.0, rel=1e-14)

    def test_unknown_family(self):
        with pytest.raises(ConfigurationError):
            InitialDataSpec(family="square")


class TestRunEnsemble:
    def test_single_deterministic_path(self):
        cfg = CFG.with_(noise_on=False)
        res = run_ensemble(SPEC, cfg, None, 1, grid=GRID, rho_list=(5.0,))
        traj = evolve(SPEC.realize(GRID), cfg, grid=GRID, snapshot_stride=1000)
        norms = spacetime_norms(traj)
        summary = res.summaries()
        assert summary["x_L5"]["value"] == pytest.approx(norms.x, rel=1e-14)
        assert summary["x2_L5"]["value"] == pytest.approx(norms.x2, rel=1e-14)

    def test_same_seed_bit_identical(self):
        a = run_ensemble(SPEC, CFG, MODEL, 6, master_seed=5)
        b = run_ensemble(SPEC, CFG, MODEL, 6, master_seed=5)
        assert [r.to_dict() for r in a.records] == [r.to_dict() for r in b.records]
        assert a.summaries() == b.summaries()
        c = run_ensemble(SPEC, CFG, MODEL, 6, master_seed=6)
        assert [r.x for r in a.records] != [r.x for r in c.records]

    def test_split_and_merge(self):
        whole = run_ensemble(SPEC, CFG, MODEL, 100, master_seed=2, chunk_size=30)
        first = run_ensemble(SPEC, CFG, MODEL, 0, master_seed=2, path_indices=range(50))
        second = run_ensemble(SPEC, CFG, MODEL, 0, master_seed=2, path_indices=range(50, 100))
        merged = second.merge(first)
        assert merged.summaries() == whole.summaries()
        assert [r.to_dict() for r in merged.records] == [r.to_dict() for r in whole.records]

    def test_worker_count_does_not_matter(self):
        one = run_ensemble(SPEC, CFG, MODEL, 8, master_seed=4, chunk_size=3, workers=1)
        two = run_ensemble(SPEC, CFG, MODEL, 8, master_seed=4, chunk_size=3, workers=2)
        assert one.summaries() == two.summaries()

    def test_merge_rejects_overlap_and_mismatch(self):
        a = run_ensemble(SPEC, CFG, MODEL, 2, master_seed=1)
        with pytest.raises(ContractViolation):
            a.merge(a)
        b = run_ensemble(SPEC, CFG, MODEL, 2, master_seed=2)
        with pytest.raises(ContractViolation):
            a.merge(b)

    def test_mass_census(self):
        res = run_ensemble(SPEC, CFG, MODEL, 20, master_seed=8)
        assert res.n_failed == 0
        assert all(r.mass_drift <= 1e-10 for r in res.ok_records)
        assert res.summaries()["max_mass_drift"] <= 1e-10

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_failed_paths_excluded(self):
        spec = InitialDataSpec(mass=20.0, small_data=False, randomize=True, amplitude_spread=0.95)
        cfg = CFG.with_(noise_on=False, nonlinearity=1e308, horizon=0.01)
        res = run_ensemble(spec, cfg, None, 30, grid=GRID, rho_list=(5.0,))
        assert 0 < res.n_failed < 30
        assert any("failed" in w for w in res.warnings)
        summary = res.summaries()
        assert summary["n_failed"] == res.n_failed
        ok = np.array([r.x for r in res.ok_records])
        assert summary["x_L5"]["value"] == pytest.approx(moment_norm(ok, 5).value)
        assert all(r.failed_step >= 0 for r in res.records if r.failed)

    def test_common_random_numbers(self):
        a = run_ensemble(SPEC, CFG, MODEL, 5, master_seed=3)
        b = run_ensemble(SPEC, CFG.with_(epsilon=0.5, nonlinearity=-1.0, truncation_m=2.0),
                         MODEL, 5, master_seed=3)
        assert [r.noise_hash for r in a.records] == [r.noise_hash for r in b.records]
        assert [r.init_hash for r in a.records] == [r.init_hash for r in b.records]
        assert len(set(r.noise_hash for r in a.records)) == 5

    def test_record_round_trip(self):
        r = run_ensemble(SPEC, CFG, MODEL, 1).records[0]
        assert PathRecord.from_dict(r.to_dict()) == r

    def test_duplicate_indices_rejected(self):
        r = run_ensemble(SPEC, CFG, MODEL, 1).records[0]
        with pytest.raises(ContractViolation):
            EnsembleResult("x", [r, r])

    def test_segments(self):
        res = run_ensemble(SPEC, CFG, MODEL, 2, segment=0.05)
        for r in res.records:
            assert len(r.segment_x2) == 4
            assert sum(s ** 5 for s in r.segment_x2) == pytest.approx(r.x2 ** 5, rel=1e-12)


class TestUniformBound:
    def test_linear_flow_ratios_are_constant(self):
        cfg = CFG.with_(noise_on=False, nonlinearity=0.0)
        table = uniform_bound_sweep(SPEC, None, cfg, [1.0, 0.1], [1.0, math.inf], 3, (5.0, 12.0),
                                    grid=GRID)
        u0 = SPEC.realize(GRID)
        free = spacetime_norms(evolve(u0, cfg, grid=GRID, snapshot_stride=1000))
        expected = 1 + free.x2 / lp_norm(GRID, u0, 2)
        values = [e["value"] for e in table.entries]
        assert np.allclose(values, expected, rtol=1e-13, atol=0)
        assert table.flatness[5.0] == pytest.approx(1.0, abs=1e-13)

    def test_truncation_inactive_for_small_data(self):
        table = uniform_bound_sweep(SPEC, MODEL, CFG, [0.5], [1.0, 2.0, math.inf], 10)
        assert not any(e["truncation_active"] for e in table.entries)
        assert np.all(table.per_path["theta_min"] == 1.0)
        x = table.per_path["x"]
        assert np.array_equal(x[0], x[1]) and np.array_equal(x[1], x[2])

    def test_requires_small_data(self):
        with pytest.raises(ConfigurationError):
            uniform_bound_sweep(InitialDataSpec(mass=1.0, small_data=False), MODEL, CFG, [0.5],
                                [1.0], 2)


class TestConvergence:
    def test_eps_diagonal_and_triangle(self):
        table = convergence_in_eps(SPEC, MODEL, CFG, math.inf, [0.4, 0.2, 0.1, 0.05], 20)
        assert np.all(np.diag(table.values) == 0)
        assert table.entry(0.2, 0.2).value == 0
        assert table.triangle_violations() == []
        assert table.entry(0.1, 0.05).value < table.entry(0.4, 0.2).value

    def test_eps_linear_flow_is_zero(self):
        table = convergence_in_eps(SPEC, MODEL, CFG.with_(nonlinearity=0.0), math.inf, [0.4, 0.1], 5)
        assert np.all(table.values == 0)

    def test_eps_single_rung_warns(self):
        table = convergence_in_eps(SPEC, MODEL, CFG, math.inf, [0.4], 3)
        assert table.values.shape == (1, 1) and table.pair_index == {}
        assert any("single value" in w for w in table.warnings)

    def test_eps_refined_resolution_agrees(self):
        fine_grid = GRID.refined()
        fine_model = build_noise_model(fine_grid, hermite_modes(3))
        coarse = convergence_in_eps(SPEC, MODEL, CFG, math.inf, [0.4, 0.2, 0.1, 0.05], 20)
        fine = convergence_in_eps(SPEC, fine_model, CFG.with_(dt=1e-3), math.inf,
                                  [0.4, 0.2, 0.1, 0.05], 20)
        assert fine.entry(0.1, 0.05).value < fine.entry(0.4, 0.2).value
        for a, b in [(0.4, 0.2), (0.1, 0.05)]:
            assert fine.entry(a, b).value == pytest.approx(coarse.entry(a, b).value, rel=0.05)

    def test_m_linear_flow_is_zero(self):
        table = convergence_in_m(SPEC, MODEL, CFG.with_(nonlinearity=0.0), [1, 2, math.inf], 5)
        assert np.all(table.values == 0)

    def test_m_untriggered_cutoff_is_bit_identical(self):
        table = convergence_in_m(SPEC, MODEL, CFG, [1, 2, 4, math.inf], 10)
        assert np.all(table.per_path_x == 0)
        for m in ("2", "4"):
            assert table.extra["census"][m]["fraction"] == 1.0
        # m = 1 cannot certify the stopping time since ||u||_X2 < m - 1 = 0 is impossible
        assert table.extra["census"]["1"]["tau_equals_T0"] == 0

    def test_m_active_cutoff_changes_solution(self):
        spec = InitialDataSpec(mass=1.0, small_data=False)
        table = convergence_in_m(spec, MODEL, CFG, [0.2, math.inf], 3)
        assert table.entry(0.2, math.inf).value > 0
        assert table.extra["census"]["0.2"]["agree_and_theta_one"] == 0


class TestStability:
    def test_identical_data(self):
        table = stability_experiment(SPEC, None, MODEL, CFG, 4, [0.0, 1e-3])
        assert table.ratios[0].value == 0.0 and table.differences[0].value == 0.0
        assert np.all(table.per_path_x[0] == 0)

    def test_linear_flow_mass_part_is_one(self):
        kappa = 1e-3
        u = SPEC.realize_many(GRID, range(4), 0)
        w = np.array([perturbation_direction(GRID, p, 0) for p in range(4)])
        run = simulate_group(GRID, np.array([u, u + kappa * w]), CFG.dt, CFG.n_steps, epsilon=[0, 0],
                             truncation_m=[math.inf] * 2, nonlinearity=[0.0, 0.0], scheme="strang",
                             model=MODEL, noise_on=True, path_indices=range(4), master_seed=0,
                             pairs=[(0, 1)])
        assert np.allclose(run.diff_l2[:, 0] / kappa, 1.0, rtol=1e-9, atol=0)

    def test_ratio_bounded_across_kappa(self):
        table = stability_experiment(SPEC, None, MODEL, CFG, 20, [1e-2, 1e-3, 1e-4])
        assert table.spread <= 1.2

    def test_explicit_direction(self):
        spec_v = InitialDataSpec(mass=0.1, center=1.0)
        table = stability_experiment(SPEC, spec_v, MODEL, CFG, 4, [1e-3])
        assert table.ratios[0].value >= 1.0


class TestPersistence:
    def test_chunking_does_not_change_result(self):
        one = persistence_experiment(SPEC, MODEL, CFG, 6, grid=GRID, chunk_size=6)
        split = persistence_experiment(SPEC, MODEL, CFG, 6, grid=GRID, chunk_size=4)
        assert np.array_equal(one.per_path_ratio, split.per_path_ratio)
        assert one.ratio == split.ratio

    def test_linear_flow_sup_h1(self):
        cfg = CFG.with_(noise_on=False, nonlinearity=0.0)
        table = persistence_experiment(SPEC, None, cfg, 1, grid=GRID)
        u0 = SPEC.realize(GRID)
        assert table.sup_h1.value == pytest.approx(float(h1_norm(GRID, u0)), rel=1e-12)
        assert table.ratio.value >= 1.0

    def test_zero_data(self):
        table = persistence_experiment(InitialDataSpec(mass=0.0), MODEL, CFG, 3)
        assert table.ratio.value == 0.0 and table.sup_h1.value == 0.0
        assert np.all(table.per_path_ratio == 0)

    def test_unresolved_spectrum_fails(self):
        from snlslab.errors import NumericalFailure
        spec = InitialDataSpec(mass=0.1, width=0.05)
        with pytest.raises(NumericalFailure):
            persistence_experiment(spec, MODEL, CFG, 2)


class TestMollifier:
    @pytest.mark.parametrize("kind", ["bump", "bspline"])
    def test_kernel_has_unit_mass(self, kind):
        ker = mollifier_kernel(GRID, 0.5, kind)
        assert ker.sum() * GRID.dx == pytest.approx(1.0, rel=1e-14)

    @pytest.mark.parametrize("kind", ["bump", "bspline"])
    def test_constant_unchanged(self, kind):
        c = np.full(GRID.n_points, 0.3 - 0.1j)
        assert np.max(np.abs(mollify_initial_data(GRID, c, 0.5, kind) - c)) <= 1e-12

    def test_error_decreases_with_width(self):
        g = make_grid(16, 512)
        u0 = gaussian(g, 1.0, 0.3, 0.8, 1.0)
        errs = [lp_norm(g, mollify_initial_data(g, u0, d) - u0, 2) for d in (0.5, 0.25, 0.125)]
        assert errs[0] > errs[1] > errs[2]

    def test_young_bounds_on_random_fields(self):
        g = make_grid(16, 512)
        r = np.random.default_rng(0)
        for delta in (0.25, 0.5, 1.0):
            dphi = mollifier_derivative_l1(g, delta, "bspline")
            for _ in range(10):
                u0 = (r.normal(size=g.n_points) + 1j * r.normal(size=g.n_points))
                v = mollify_initial_data(g, u0, delta, "bspline")
                n2 = lp_norm(g, u0, 2)
                assert lp_norm(g, v, 2) <= n2 * (1 + 1e-12)
                assert h1_seminorm(g, v) <= dphi * n2 * (1 + 1e-9)

    def test_under_resolved_width_warns(self):
        with pytest.warns(RuntimeWarning):
            mollifier_kernel(GRID, GRID.dx / 2)

    def test_invalid(self):
        with pytest.raises(ConfigurationError):
            mollifier_kernel(GRID, 0.0)
        with pytest.raises(ConfigurationError):
            mollifier_kernel(GRID, 0.5, "square")
