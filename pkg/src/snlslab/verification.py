"""Property suite behind ``snlslab verify``.

Each check returns a :class:`PropertyResult` with status ``pass``, ``fail``
or ``skip`` and the measured quantities; stochastic checks are skipped (not
passed) when the configuration turns the noise off.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .config import ExperimentConfig
from .dynamics import SolverConfig, duhamel_residual, evolve
from .ensemble import run_ensemble
from .functionals import StochasticIntegrals, dissect, q_star_x2_fifth
from .inequalities import gagliardo_nirenberg_ratio, run_corpus, smooth_fields
from .noise import BrownianPath, NoiseModel, brownian_ladder
from .spectral import Grid, free_propagate, gaussian, gaussian_free_solution, lp_norm

PASS, FAIL, SKIP = "pass", "fail", "skip"


@dataclass
class PropertyResult:
    name: str
    status: str
    measured: dict = field(default_factory=dict)
    message: str = ""
    seconds: float = 0.0

    @property
    def ok(self) -> bool:
        return self.status != FAIL

    def line(self) -> str:
        vals = ", ".join(f"{k}={_fmt(v)}" for k, v in self.measured.items())
        msg = f" ({self.message})" if self.message else ""
        return f"[{self.status.upper():4}] {self.name}: {vals}{msg} [{self.seconds:.1f}s]"


def _fmt(v):
    if isinstance(v, float):
        return f"{v:.6g}"
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_fmt(x) for x in v) + "]"
    return str(v)


def _status(ok: bool) -> str:
    return PASS if ok else FAIL


# --------------------------------------------------------------------------- reusable studies

@dataclass
class OrderFit:
    dts: list
    errors: list
    slope: float


def fit_order(dts, errors) -> float:
    return float(np.polyfit(np.log(dts), np.log(errors), 1)[0])


def study_horizon(dt_fine: float, horizon: float, levels: int) -> float:
    coarse = dt_fine * 2 ** (levels - 1)
    return coarse * max(1, math.floor(horizon / coarse + 1e-9))


def deterministic_order(grid: Grid, u0: np.ndarray, dt_fine: float, horizon: float,
                        levels: int = 4, epsilon: float = 0.0, nonlinearity: float = 1.0) -> OrderFit:
    """Duhamel residual at the final time for a dt-halving ladder with the noise off."""
    T = study_horizon(dt_fine, horizon, levels)
    dts = [dt_fine * 2 ** (levels - 1 - i) for i in range(levels)]
    errs = []
    for dt in dts:
        cfg = SolverConfig(dt, T, epsilon=epsilon, noise_on=False, nonlinearity=nonlinearity)
        errs.append(duhamel_residual(evolve(u0, cfg, grid=grid)))
    return OrderFit(dts, errs, fit_order(dts, errs))


def stochastic_order(model: NoiseModel, u0: np.ndarray, dt_fine: float, horizon: float,
                     n_paths: int = 100, levels: int = 4, master_seed: int = 0,
                     epsilon: float = 0.0, nonlinearity: float = 1.0) -> OrderFit:
    """Root-mean-square Duhamel residual over paths, one refined Brownian motion per path."""
    T = study_horizon(dt_fine, horizon, levels)
    n_fine = int(round(T / dt_fine))
    sq = np.zeros(levels)
    for p in range(n_paths):
        ladder = brownian_ladder(master_seed, p, model.n_modes, dt_fine, n_fine, levels)[::-1]
        for i, path in enumerate(ladder):
            cfg = SolverConfig(path.dt, T, epsilon=epsilon, nonlinearity=nonlinearity)
            traj = evolve(u0, cfg, model, path)
            sq[i] += duhamel_residual(traj, model, path) ** 2
    dts = [dt_fine * 2 ** (levels - 1 - i) for i in range(levels)]
    errs = list(np.sqrt(sq / n_paths))
    return OrderFit(dts, errs, fit_order(dts, errs))


def ito_characteristic_check(model: NoiseModel, dt: float, n_increments: int = 100_000,
                             n_probes: int = 5, master_seed: int = 0) -> list:
    """``(x0, |mean e^{-i dW(x0)} - e^{-F(x0) dt / 2}|, standard error)`` at probe points.

    Probes are the grid points where ``F`` is largest and a spread around them.
    """
    grid = model.grid
    centre = int(np.argmax(model.correction))
    spacing = max(1, int(round(0.5 / grid.dx)))
    offsets = [0, -spacing, spacing, -3 * spacing, 3 * spacing][:n_probes]
    idx = [(centre + o) % grid.n_points for o in offsets]
    dB = BrownianPath(master_seed, 0, model.n_modes, dt, n_increments).increments  # (K, N)
    dW = dB.T @ model.scaled_profiles[:, idx]                                    # (N, probes)
    z = np.exp(-1j * dW)
    mean = z.mean(axis=0)
    se = np.sqrt((z.real.var(axis=0, ddof=1) + z.imag.var(axis=0, ddof=1)) / n_increments)
    target = np.exp(-model.correction[idx] * dt / 2.0)
    return [(float(grid.x[i]), float(abs(m - t)), float(s)) for i, m, t, s in zip(idx, mean, target, se)]


def dissection_census(model: NoiseModel, u0_list, config: SolverConfig, master_seed: int = 0,
                      path_offset: int = 0) -> list:
    """``(K, bound)`` for every path, with ``bound = max{1, 2 ||Q*||_X2^5} + 1``."""
    out = []
    for p, u0 in enumerate(u0_list):
        path = BrownianPath(master_seed, path_offset + p, model.n_modes, config.dt, config.n_steps)
        traj = evolve(u0, config, model, path)
        q = StochasticIntegrals(traj, model, path).q_star_series()
        d = dissect(q, config.dt, config.n_steps)
        out.append((d.count, d.count_bound(q_star_x2_fifth(q, config.dt, config.n_steps))))
    return out


# --------------------------------------------------------------------------- checks

def _timed(fn: Callable[[], PropertyResult]) -> PropertyResult:
    t0 = time.perf_counter()
    res = fn()
    res.seconds = time.perf_counter() - t0
    return res


def check_unitarity(grid: Grid, seed: int = 0) -> PropertyResult:
    rng = np.random.default_rng(seed)
    worst, group = 0.0, 0.0
    for _ in range(10):
        u = rng.normal(size=grid.n_points) + 1j * rng.normal(size=grid.n_points)
        s, t = rng.uniform(-2, 2, size=2)
        n0 = lp_norm(grid, u, 2)
        worst = max(worst, abs(lp_norm(grid, free_propagate(grid, u, t), 2) - n0) / n0)
        a = free_propagate(grid, free_propagate(grid, u, s), t)
        group = max(group, lp_norm(grid, a - free_propagate(grid, u, s + t), 2) / n0)
    return PropertyResult("free flow unitarity and group law", _status(worst <= 1e-12 and group <= 1e-12),
                          {"max_norm_change": worst, "max_group_error": group})


def check_linear_oracle() -> PropertyResult:
    grid = Grid(16.0, 512)
    u = free_propagate(grid, gaussian(grid), 0.5)
    exact = gaussian_free_solution(grid, 0.5)
    err = float(lp_norm(grid, u - exact, 2) / lp_norm(grid, exact, 2))
    return PropertyResult("free Gaussian closed form", _status(err <= 1e-6),
                          {"relative_l2_error": err, "tolerance": 1e-6})


def check_gagliardo_nirenberg(grid: Grid) -> PropertyResult:
    ratios = [gagliardo_nirenberg_ratio(grid, u) for _, u in smooth_fields(grid)]
    return PropertyResult("Gagliardo-Nirenberg in 1D", _status(max(ratios) <= 1 + 1e-6),
                          {"max_ratio": max(ratios)})


def check_mass_census(cfg: ExperimentConfig) -> PropertyResult:
    res = run_ensemble(cfg.initial_spec(), cfg.solver_config(), cfg.noise_model(),
                       cfg.ensemble.n_paths, cfg.ensemble.master_seed, grid=cfg.grid_obj(),
                       rho_list=(cfg.ensemble.rho0,), chunk_size=cfg.ensemble.chunk_size,
                       workers=cfg.ensemble.threads)
    drifts = [r.mass_drift for r in res.ok_records]
    worst = max(drifts) if drifts else math.nan
    ok = res.n_failed == 0 and worst <= 1e-10
    return PropertyResult("mass conservation census", _status(ok),
                          {"paths": len(res.records), "failed": res.n_failed, "max_drift": worst})


def _initial(cfg: ExperimentConfig) -> np.ndarray:
    return cfg.initial_spec().realize(cfg.grid_obj(), 0, cfg.ensemble.master_seed)


def check_deterministic_order(cfg: ExperimentConfig) -> PropertyResult:
    s = cfg.solver
    fit = deterministic_order(cfg.grid_obj(), _initial(cfg), s.dt, s.horizon,
                              epsilon=s.epsilon, nonlinearity=s.nonlinearity)
    return PropertyResult("Duhamel residual order (noise off)", _status(1.7 <= fit.slope <= 2.2),
                          {"slope": fit.slope, "dts": fit.dts, "residuals": fit.errors},
                          "target slope in [1.7, 2.2]")


def _noise_active(cfg: ExperimentConfig) -> bool:
    return cfg.solver.noise_on and cfg.noise_model().n_modes > 0


def check_stochastic_order(cfg: ExperimentConfig, n_paths: int = 100) -> PropertyResult:
    name = "Duhamel residual strong order (noise on)"
    if not _noise_active(cfg):
        return PropertyResult(name, SKIP, message="noise is off")
    s = cfg.solver
    fit = stochastic_order(cfg.noise_model(), _initial(cfg), s.dt, s.horizon, n_paths,
                           master_seed=cfg.ensemble.master_seed, epsilon=s.epsilon,
                           nonlinearity=s.nonlinearity)
    return PropertyResult(name, _status(fit.slope >= 0.4),
                          {"slope": fit.slope, "dts": fit.dts, "rms_residuals": fit.errors,
                           "paths": n_paths}, "target slope >= 0.4")


def check_ito_correction(cfg: ExperimentConfig) -> PropertyResult:
    name = "Ito-Stratonovich characteristic function"
    if not _noise_active(cfg):
        return PropertyResult(name, SKIP, message="noise is off")
    probes = ito_characteristic_check(cfg.noise_model(), cfg.solver.dt,
                                      master_seed=cfg.ensemble.master_seed)
    worst = max(d / s if s > 0 else (0.0 if d == 0 else math.inf) for _, d, s in probes)
    return PropertyResult(name, _status(worst <= 3.0),
                          {"max_deviation_in_se": worst, "probes": [p[0] for p in probes]})


def check_dissection(cfg: ExperimentConfig, n_paths: int = 50) -> PropertyResult:
    name = "random dissection count bound"
    if not _noise_active(cfg):
        return PropertyResult(name, SKIP, message="noise is off")
    grid, model = cfg.grid_obj(), cfg.noise_model()
    spec = cfg.initial_spec()
    n = min(n_paths, cfg.ensemble.n_paths)
    u0s = spec.realize_many(grid, range(n), cfg.ensemble.master_seed)
    census = dissection_census(model, u0s, cfg.solver_config(), cfg.ensemble.master_seed)
    # stress case: strong noise and unit-mass data so that several intervals appear
    strong = model.scaled(3.0)
    big = gaussian(grid)
    big /= lp_norm(grid, big, 2)
    census += dissection_census(strong, [big] * 10, cfg.solver_config(), cfg.ensemble.master_seed)
    ok = all(k <= b for k, b in census)
    return PropertyResult(name, _status(ok), {"paths": len(census),
                                              "max_K": max(k for k, _ in census),
                                              "violations": sum(k > b for k, b in census)})


def check_corpus(cfg: ExperimentConfig, include_stochastic: Optional[bool] = None) -> list:
    stoch = _noise_active(cfg) if include_stochastic is None else include_stochastic
    t0 = time.perf_counter()
    reports = run_corpus(include_stochastic=stoch)
    seconds = (time.perf_counter() - t0) / max(1, len(reports))
    out = [PropertyResult(f"inequality corpus: {r.name}", _status(r.passed),
                          {"C_base": r.base_max, "C_double": r.fine_max, "members": len(r.labels)},
                          seconds=seconds)
           for r in reports]
    if not stoch:
        out += [PropertyResult(f"inequality corpus: {n}", SKIP, message="noise is off")
                for n in ("stochastic L2", "stochastic L10")]
    return out


def run_property_suite(cfg: ExperimentConfig, log: Optional[Callable[[str], None]] = None) -> list:
    grid = cfg.grid_obj()
    checks = [
        lambda: check_unitarity(grid, cfg.ensemble.master_seed),
        check_linear_oracle,
        lambda: check_gagliardo_nirenberg(grid),
        lambda: check_mass_census(cfg),
        lambda: check_deterministic_order(cfg),
        lambda: check_stochastic_order(cfg),
        lambda: check_ito_correction(cfg),
        lambda: check_dissection(cfg),
    ]
    results = []
    for chk in checks:
        r = _timed(chk)
        results.append(r)
        if log:
            log(r.line())
    for r in check_corpus(cfg):
        results.append(r)
        if log:
            log(r.line())
    return results
