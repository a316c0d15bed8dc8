"""Measured constants for the linear, nonlinear and stochastic estimates.

Each estimate ``lhs <= C * rhs`` is evaluated on a built-in corpus of test
fields, segments and noise models, giving one constant ``lhs / rhs`` per
corpus member.  Every corpus is evaluated at a base resolution and at double
resolution (twice the grid points, half the time step, the same Brownian
motion), and a corpus passes when no base-resolution member exceeds
``tolerance`` times the largest double-resolution constant.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from .dynamics import _power, integrate_batch
from .functionals import bound_ratio, norms_from_series
from .noise import BrownianPath, NoiseModel, build_noise_model, hermite_modes, radonifying_norm_mc
from .spectral import Grid, derivative, gaussian, lp_norm, propagator
from .ensemble import moment_norm

ADMISSIBLE_PAIRS = ((math.inf, 2.0), (12.0, 3.0), (8.0, 4.0), (6.0, 6.0), (5.0, 10.0))


def is_admissible(q: float, r: float, tol: float = 1e-12) -> bool:
    """``2/q + 1/r = 1/2`` with ``2 <= r <= inf``."""
    return r >= 2 and abs(2.0 / q + 1.0 / r - 0.5) <= tol


@dataclass(frozen=True)
class Resolution:
    half_width: float = 16.0
    n_points: int = 256
    dt: float = 2e-3
    horizon: float = 0.5

    @property
    def grid(self) -> Grid:
        return Grid(self.half_width, self.n_points)

    @property
    def n_steps(self) -> int:
        return int(round(self.horizon / self.dt))

    def doubled(self) -> "Resolution":
        return replace(self, n_points=2 * self.n_points, dt=self.dt / 2)

    def step(self, t: float) -> int:
        return int(round(t / self.dt))


@dataclass
class CorpusReport:
    name: str
    labels: list
    base: np.ndarray
    fine: np.ndarray
    tolerance: float = 1.05
    details: dict = field(default_factory=dict)

    @property
    def base_max(self) -> float:
        return float(np.max(self.base))

    @property
    def fine_max(self) -> float:
        return float(np.max(self.fine))

    @property
    def worst_member(self) -> str:
        return self.labels[int(np.argmax(self.base))]

    @property
    def passed(self) -> bool:
        ok = np.all(np.isfinite(self.base)) and np.all(np.isfinite(self.fine))
        return bool(ok and self.fine_max > 0 and self.base_max <= self.tolerance * self.fine_max)

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return (f"{status} {self.name}: C_base={self.base_max:.6g} C_fine={self.fine_max:.6g} "
                f"ratio={self.base_max / self.fine_max if self.fine_max else math.inf:.4f} "
                f"members={len(self.labels)} worst={self.worst_member}")


def _evaluate(name, measure: Callable[[Resolution], list], res: Resolution, tolerance=1.05) -> CorpusReport:
    base = measure(res)
    fine = measure(res.doubled())
    labels = [b[0] for b in base]
    return CorpusReport(name, labels, np.array([b[1] for b in base]),
                        np.array([f[1] for f in fine]), tolerance)


# --------------------------------------------------------------------------- test fields

def _bump(grid: Grid, center: float, radius: float) -> np.ndarray:
    s = (grid.x - center) / radius
    out = np.zeros(grid.n_points)
    inside = np.abs(s) < 1
    out[inside] = np.exp(-1.0 / (1.0 - s[inside] ** 2))
    return out.astype(complex)


def compact_fields(grid: Grid) -> list:
    """Compactly supported test fields (smooth bumps, some modulated)."""
    x = grid.x
    return [
        ("bump_r1", _bump(grid, 0.0, 1.0)),
        ("bump_r2", _bump(grid, 0.0, 2.0)),
        ("bump_r1_mod", _bump(grid, 0.5, 1.0) * np.exp(1j * x)),
        ("two_bumps", _bump(grid, -1.5, 1.0) + 0.5 * _bump(grid, 1.5, 1.0)),
    ]


def smooth_fields(grid: Grid) -> list:
    """Decaying test fields with unit L^2 norm."""
    x = grid.x
    fields = [
        ("gauss_w0.5", gaussian(grid, 1.0, 0.0, 0.5)),
        ("gauss_w1", gaussian(grid, 1.0, 0.0, 1.0)),
        ("gauss_w2", gaussian(grid, 1.0, 0.0, 2.0)),
        ("gauss_mod", gaussian(grid, 1.0, 0.5, 1.0, 1.5)),
        ("two_gauss", gaussian(grid, 1.0, -2.0, 0.7) + gaussian(grid, 0.6, 2.0, 1.0, -1.0)),
        ("sech", (1.0 / np.cosh(x)).astype(complex)),
    ]
    return [(n, u / lp_norm(grid, u, 2)) for n, u in fields]


def corpus_models(grid: Grid) -> list:
    return [
        ("hermite4", build_noise_model(grid, hermite_modes(4))),
        ("hermite8_narrow", build_noise_model(grid, hermite_modes(8, amplitude=0.7, scale=1.0))),
        ("gauss1", build_noise_model(grid, [(0.8, {"name": "gaussian", "width": 1.5})])),
        ("sech2", build_noise_model(grid, [(0.5, {"name": "sech", "width": 1.0}),
                                           (0.3, {"name": "sech", "center": 1.0, "width": 2.0})])),
    ]


def _segments(horizon: float) -> list:
    h = horizon
    return [(0.0, h), (0.0, h / 4), (h / 4, 3 * h / 4), (h / 2, h)]


def free_series(grid: Grid, u0: np.ndarray, dt: float, n_steps: int) -> np.ndarray:
    """``S(t_j) u0`` for ``j = 0..n_steps`` (rows)."""
    t = dt * np.arange(n_steps + 1)
    return np.fft.ifft(np.fft.fft(u0)[None, :] * propagator(grid, t), axis=-1)


def _x_norm(grid: Grid, fields: np.ndarray, dt: float):
    return norms_from_series(lp_norm(grid, fields, 2), lp_norm(grid, fields, 10), dt)


def running_duhamel(grid: Grid, g: np.ndarray, dt: float) -> np.ndarray:
    """Rows ``n``: ``sum_{j<n} S((n-j) dt) g_j dt`` (left-endpoint rule), starting from 0."""
    n = len(g) - 1
    s = dt * np.arange(n + 1)
    hat = np.fft.fft(g, axis=-1) * np.exp(1j * np.multiply.outer(s, grid.k ** 2))
    c = np.zeros_like(hat)
    np.cumsum(hat[:-1], axis=0, out=c[1:])
    return np.fft.ifft(c * propagator(grid, s), axis=-1) * dt


# --------------------------------------------------------------------------- single measurements

def dispersive_constant(grid: Grid, f: np.ndarray, t: float, p: float = 1.0) -> float:
    """``||S(t) f||_{L^p'} t^(1/p - 1/2) / ||f||_{L^p}`` (decay rate ``t^-(1/p - 1/2)``)."""
    pc = math.inf if p == 1.0 else p / (p - 1.0)
    lhs = float(lp_norm(grid, np.fft.ifft(np.fft.fft(f) * propagator(grid, t)), pc))
    return bound_ratio(lhs * t ** (1.0 / p - 0.5), float(lp_norm(grid, f, p)))


def strichartz_constant(grid: Grid, f: np.ndarray, q: float, r: float, dt: float, n_steps: int) -> float:
    """``||S(t) f||_{L^q_t L^r_x(0, T)} / ||f||_{L^2}`` (left-endpoint rule in time)."""
    if not is_admissible(q, r):
        raise ValueError(f"({q}, {r}) is not admissible")
    norms = lp_norm(grid, free_series(grid, f, dt, n_steps), r)
    lhs = float(norms.max()) if math.isinf(q) else float((np.sum(norms[:-1] ** q) * dt) ** (1.0 / q))
    return bound_ratio(lhs, float(lp_norm(grid, f, 2)))


def gagliardo_nirenberg_ratio(grid: Grid, u: np.ndarray) -> float:
    """``||u||_inf^2 / (2 ||u||_2 ||u'||_2)``; at most 1 on the line."""
    lhs = float(lp_norm(grid, u, math.inf)) ** 2
    return bound_ratio(lhs, 2.0 * float(lp_norm(grid, u, 2) * lp_norm(grid, derivative(grid, u), 2)))


def nonlinear_constant(grid: Grid, sigma: np.ndarray, dt: float, epsilon: float) -> float:
    """``||int_a^t S(t-s) N^eps(sigma) ds||_X / ((b-a)^(eps/4) ||sigma||_X1 ||sigma||_X2^(4-eps))``
    for a series ``sigma`` on ``[a, b]``."""
    d = running_duhamel(grid, sigma * _power(sigma, epsilon), dt)
    sn = _x_norm(grid, sigma, dt)
    length = dt * (len(sigma) - 1)
    rhs = length ** (epsilon / 4.0) * sn.x1 * sn.x2 ** (4.0 - epsilon)
    return bound_ratio(float(_x_norm(grid, d, dt).x), float(rhs))


def correction_constants(grid: Grid, model: NoiseModel, sigma: np.ndarray, dt: float) -> tuple:
    """Measured constants of the correction term in ``X_1`` and in ``X_2``."""
    a = running_duhamel(grid, model.correction * sigma, dt)
    an = _x_norm(grid, a, dt)
    s1 = float(lp_norm(grid, sigma, 2).max())
    length = dt * (len(sigma) - 1)
    f = model.correction
    c1 = bound_ratio(float(an.x1), length * float(np.max(np.abs(f))) * s1)
    c2 = bound_ratio(float(an.x2), length ** 0.8 * float(lp_norm(grid, f, 2.5)) * s1)
    return c1, c2


# --------------------------------------------------------------------------- corpora

def dispersive_corpus(res: Resolution, p: float = 1.0) -> list:
    grid = res.grid
    out = []
    for name, f in compact_fields(grid):
        for t in (0.05, 0.1, 0.2, 0.4):
            out.append((f"{name}@t={t}", dispersive_constant(grid, f, t, p)))
    return out


def strichartz_corpus(res: Resolution) -> list:
    grid = res.grid
    out = []
    for name, f in smooth_fields(grid):
        for q, r in ADMISSIBLE_PAIRS:
            out.append((f"{name}@({q:g},{r:g})",
                        strichartz_constant(grid, f, q, r, res.dt, res.n_steps)))
    return out


def nonlinear_corpus(res: Resolution, eps_list=(0.0, 0.5, 1.0, 2.0)) -> list:
    grid = res.grid
    out = []
    for name, f in smooth_fields(grid):
        series = free_series(grid, f, res.dt, res.n_steps)
        for a, b in _segments(res.horizon):
            seg = series[res.step(a):res.step(b) + 1]
            for eps in eps_list:
                out.append((f"{name}[{a:g},{b:g}]eps={eps:g}",
                            nonlinear_constant(grid, seg, res.dt, eps)))
    return out


def correction_corpus(res: Resolution, component: int) -> list:
    grid = res.grid
    out = []
    fields = smooth_fields(grid)[:4]
    for mname, model in corpus_models(grid):
        for name, f in fields:
            series = free_series(grid, f, res.dt, res.n_steps)
            for a, b in _segments(res.horizon):
                seg = series[res.step(a):res.step(b) + 1]
                out.append((f"{mname}/{name}[{a:g},{b:g}]",
                            correction_constants(grid, model, seg, res.dt)[component]))
    return out


# --------------------------------------------------------------------------- stochastic corpora

@dataclass(frozen=True)
class StochasticSetup:
    n_paths: int = 100
    rho: float = 6.0
    mass: float = 0.5
    master_seed: int = 11
    n_gamma: int = 4000


def _noisy_paths(res: Resolution, model: NoiseModel, setup: StochasticSetup, u0: np.ndarray):
    """Solutions (the adapted integrands) and the step noise fields for every path.

    The base resolution builds each step from two primitive increments, so it
    shares the Brownian motion of the doubled resolution.
    """
    base_steps = int(round(res.horizon / res.dt))
    refinement = 1 if res.n_points > Resolution.n_points else 2
    dB = np.array([BrownianPath(setup.master_seed, p, model.n_modes, res.dt, base_steps,
                                refinement).increments for p in range(setup.n_paths)])
    snaps = []
    run = integrate_batch(model.grid, np.broadcast_to(u0, (setup.n_paths, u0.size)), res.dt,
                          base_steps, noise=lambda j: model.field(dB[:, :, j]),
                          observer=lambda j, u: snaps.append(u.copy()))
    if np.any(run.failed):
        raise FloatingPointError("non-finite integrand in the stochastic corpus")
    sigma = np.stack(snaps, axis=1)                      # (P, N+1, n)
    fields = model.field(np.moveaxis(dB, 1, 2))          # (P, N, n)
    return sigma, fields


def _stochastic_partials(grid, sigma, fields, dt, lo, hi):
    """Fourier partial sums of ``S(-s_j) sigma_j dW_j`` for ``j`` in ``lo..hi-1`` (rows start at 0)."""
    s = dt * np.arange(lo, hi)
    hat = np.fft.fft(sigma[:, lo:hi] * fields[:, lo:hi], axis=-1) * np.exp(
        1j * np.multiply.outer(s, grid.k ** 2))
    partial = np.zeros((sigma.shape[0], hi - lo + 1, grid.n_points), dtype=complex)
    np.cumsum(hat, axis=1, out=partial[:, 1:])
    return partial


def _pair_sup_l2(grid, partial):
    """``max_{i<j} ||P_j - P_i||_2`` per path via the Gram matrix (S is unitary)."""
    fields = np.fft.ifft(partial, axis=-1)
    gram = np.einsum("pin,pjn->pij", fields, fields.conj()).real * grid.dx
    diag = np.einsum("pii->pi", gram)
    d2 = diag[:, :, None] + diag[:, None, :] - 2.0 * gram
    return np.sqrt(np.maximum(d2, 0.0).max(axis=(1, 2)))


def _q_star_l10(grid, partial, dt, lo):
    """``2 max_r ||S(t) P(r)||_10`` for every ``t`` of the segment, per path: ``(P, N_seg+1)``."""
    P, m, n = partial.shape
    out = np.zeros((P, m))
    for i in range(1, m):
        t = dt * (lo + i)
        f = np.fft.ifft(partial[:, 1:i + 1] * propagator(grid, t), axis=-1)
        out[:, i] = 2.0 * lp_norm(grid, f, 10).max(axis=1)
    return out


def stochastic_corpus(res: Resolution, setup: StochasticSetup = StochasticSetup(),
                      models: Optional[list] = None) -> tuple:
    """Constants of the ``L^2`` (sup in time) and ``L^10`` (``L^5`` in time) stochastic bounds.

    The right sides include the radonifying norms of the covariance into
    ``L^inf`` and ``L^(5/2)`` (Monte Carlo, fixed seed).
    """
    grid = res.grid
    models = corpus_models(grid)[:2] if models is None else models
    u0 = gaussian(grid, 1.0, 0.0, 1.0)
    u0 *= setup.mass / lp_norm(grid, u0, 2)
    out1, out2 = [], []
    for mname, model in models:
        sigma, fields = _noisy_paths(res, model, setup, u0)
        g_inf = radonifying_norm_mc(model, math.inf, setup.n_gamma, setup.master_seed)[0]
        g_52 = radonifying_norm_mc(model, 2.5, setup.n_gamma, setup.master_seed)[0]
        sig_l2 = lp_norm(grid, sigma, 2)  # (P, N+1)
        for a, b in _segments(res.horizon):
            lo, hi = res.step(a), res.step(b)
            partial = _stochastic_partials(grid, sigma, fields, res.dt, lo, hi)
            x1 = sig_l2[:, lo:hi + 1].max(axis=1)
            sx1 = moment_norm(x1, setup.rho).value
            m1 = moment_norm(_pair_sup_l2(grid, partial), setup.rho).value
            q = _q_star_l10(grid, partial, res.dt, lo)
            m2 = moment_norm((np.sum(q[:, :-1] ** 5, axis=1) * res.dt) ** 0.2, setup.rho).value
            length = b - a
            label = f"{mname}[{a:g},{b:g}]"
            out1.append((label, bound_ratio(m1, length ** 0.5 * g_inf * sx1)))
            out2.append((label, bound_ratio(m2, length ** 0.3 * g_52 * sx1)))
    return out1, out2


def burkholder_constants(res: Resolution, model: NoiseModel, rho_list=(2.0, 5.0, 8.0),
                         p_list=(2.0, 10.0), setup: StochasticSetup = StochasticSetup(),
                         n_gamma: int = 200) -> dict:
    """``E sup_t ||int_0^t sigma dW||_p^rho`` against ``E (int ||sigma Phi||_gamma^2 ds)^(rho/2)``.

    Returns ``{(p, rho): (lhs, rhs)}`` using the ``rho``-th roots of both sides.
    The radonifying norm into ``L^2`` is exact (``int |sigma|^2 F``); into other
    ``L^p`` it is a Monte Carlo average over ``n_gamma`` shared Gaussian draws.
    """
    grid = model.grid
    u0 = gaussian(grid, 1.0, 0.0, 1.0)
    u0 *= setup.mass / lp_norm(grid, u0, 2)
    sigma, fields = _noisy_paths(res, model, setup, u0)
    n = fields.shape[1]
    mart = np.zeros((sigma.shape[0], n + 1, grid.n_points), dtype=complex)
    np.cumsum(sigma[:, :n] * fields, axis=1, out=mart[:, 1:])
    gam = model.field(np.random.default_rng([setup.master_seed, 0xCAFE]).standard_normal(
        (n_gamma, model.n_modes)))
    out = {}
    for p in p_list:
        lhs_paths = lp_norm(grid, mart, p).max(axis=1)
        if p == 2.0:
            g2 = np.sum(np.abs(sigma[:, :n]) ** 2 * model.correction, axis=-1) * grid.dx
        else:
            g2 = np.array([[np.mean(lp_norm(grid, sigma[i, j] * gam, p) ** 2) for j in range(n)]
                           for i in range(sigma.shape[0])])
        rhs_paths = np.sqrt(np.sum(g2, axis=1) * res.dt)
        for rho in rho_list:
            out[(p, rho)] = (moment_norm(lhs_paths, rho).value, moment_norm(rhs_paths, rho).value)
    return out


def multiplication_check(model: NoiseModel, sigma: np.ndarray, p: float, q: float,
                         n_samples: int = 4000, seed: int = 0) -> tuple:
    """``(lhs, rhs, se)`` for ``||sigma Phi||_{R(L^r)} <= ||sigma||_{L^q} ||Phi||_{R(L^p)}``,
    ``1/r = 1/p + 1/q``, with Monte Carlo standard error ``se`` of ``lhs - rhs``."""
    r = 1.0 / (1.0 / p + 1.0 / q)
    lhs, se_l = radonifying_norm_mc(model, r, n_samples, seed, multiplier=sigma)
    phi, se_p = radonifying_norm_mc(model, p, n_samples, seed)
    s = float(lp_norm(model.grid, sigma, q))
    return lhs, s * phi, math.hypot(se_l, s * se_p)


# --------------------------------------------------------------------------- suite

def run_corpus(res: Resolution = Resolution(), stochastic_res: Optional[Resolution] = None,
               setup: StochasticSetup = StochasticSetup(), tolerance: float = 1.05,
               include_stochastic: bool = True) -> list:
    """All corpus reports (each at base and double resolution)."""
    reports = [
        _evaluate("dispersive p=1", lambda r: dispersive_corpus(r, 1.0), res, tolerance),
        _evaluate("dispersive p=4/3", lambda r: dispersive_corpus(r, 4.0 / 3.0), res, tolerance),
        _evaluate("strichartz", strichartz_corpus, res, tolerance),
        _evaluate("nonlinear duhamel", nonlinear_corpus, res, tolerance),
        _evaluate("correction X1", lambda r: correction_corpus(r, 0), res, tolerance),
        _evaluate("correction X2", lambda r: correction_corpus(r, 1), res, tolerance),
    ]
    if include_stochastic:
        sres = stochastic_res or Resolution(dt=5e-3, horizon=0.25)
        b1, b2 = stochastic_corpus(sres, setup)
        f1, f2 = stochastic_corpus(sres.doubled(), setup)
        for name, base, fine in (("stochastic L2", b1, f1), ("stochastic L10", b2, f2)):
            reports.append(CorpusReport(name, [x[0] for x in base], np.array([x[1] for x in base]),
                                        np.array([x[1] for x in fine]), tolerance))
    return reports
