"""Space-time norms and path functionals of trajectories.

Time integrals use the left-endpoint rule on the solver grid, suprema are
grid maxima, and stopping times snap forward to the next grid time.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .dynamics import Trajectory, _noise_source, _power
from .errors import ContractViolation
from .noise import BrownianPath, NoiseModel
from .spectral import Grid, derivative, interaction_transform, lp_norm, propagator


@dataclass(frozen=True)
class SpaceTimeNorms:
    x1: float
    x2: float
    sobolev: Optional[float] = None  # ||u||_X + ||u_x||_X when requested

    @property
    def x(self) -> float:
        return self.x1 + self.x2


def norms_from_series(l2, l10, dt: float, lo: int = 0, hi: Optional[int] = None) -> SpaceTimeNorms:
    """X-type norms on grid times ``lo..hi`` from per-time spatial norms.

    Works on arrays with time as the first axis (extra axes are carried along).
    """
    l2, l10 = np.asarray(l2), np.asarray(l10)
    hi = len(l2) - 1 if hi is None else hi
    if hi <= lo:
        zero = np.zeros(l2.shape[1:]) if l2.ndim > 1 else 0.0
        return SpaceTimeNorms(zero, zero)
    x1 = l2[lo:hi + 1].max(axis=0)
    x2 = (np.sum(l10[lo:hi] ** 5, axis=0) * dt) ** 0.2
    return SpaceTimeNorms(x1, x2)


def _interval(traj: Trajectory, a: float, b: float):
    return traj.step_index(a), traj.step_index(b)


def spacetime_norms(traj: Trajectory, a: float = 0.0, b: Optional[float] = None,
                    sobolev: bool = False) -> SpaceTimeNorms:
    """``X_1``, ``X_2`` (and optionally ``X^1``) norms of a trajectory on ``[a, b]``."""
    b = traj.n_steps * traj.dt if b is None else b
    lo, hi = _interval(traj, a, b)
    base = norms_from_series(traj.l2, traj.l10, traj.dt, lo, hi)
    if not sobolev:
        return base
    du = derivative(traj.grid, traj.require_complete(hi)[lo:hi + 1])
    dn = norms_from_series(lp_norm(traj.grid, du, 2), lp_norm(traj.grid, du, 10), traj.dt,
                           0, hi - lo)
    return SpaceTimeNorms(base.x1, base.x2, float(base.x + dn.x))


def field_series_norms(grid: Grid, fields: np.ndarray, dt: float) -> SpaceTimeNorms:
    """X norms of an explicit time series of fields (rows at consecutive grid times)."""
    return norms_from_series(lp_norm(grid, fields, 2), lp_norm(grid, fields, 10), dt)


# --------------------------------------------------------------------------- stochastic integrals

class StochasticIntegrals:
    """Left-point Ito sums ``sum_j S(t - s_j) (u(s_j) dW_j)`` of one trajectory.

    Partial sums of ``S(-s_j) u_j dW_j`` are kept in Fourier space, so any
    ``int_{r1}^{r2} S(t-s) u dW`` costs one inverse FFT.
    """

    def __init__(self, traj: Trajectory, model: NoiseModel, path: BrownianPath,
                 integrand: Optional[np.ndarray] = None):
        self.traj = traj
        self.grid = traj.grid
        n = traj.n_steps
        fields, _ = _noise_source(model, path, traj.config, n)
        self.active = fields is not None
        sigma = traj.require_complete() if integrand is None else integrand
        if self.active:
            s = traj.grid_times[:n]
            hat = interaction_transform(self.grid, s, sigma[:n] * fields)
            self.partial = np.zeros((n + 1, self.grid.n_points), dtype=complex)
            np.cumsum(hat, axis=0, out=self.partial[1:])
        else:
            self.partial = np.zeros((n + 1, self.grid.n_points), dtype=complex)

    def integral(self, r1: float, r2: float, t: float) -> np.ndarray:
        i1, i2, it = (self.traj.step_index(v) for v in (r1, r2, t))
        if not i1 <= i2 <= it:
            raise ContractViolation("need r1 <= r2 <= t")
        hat = (self.partial[i2] - self.partial[i1]) * propagator(self.grid, it * self.traj.dt)
        return np.fft.ifft(hat)

    def one_sided(self, it: int, p=10.0, start: int = 0) -> np.ndarray:
        """``|| int_{s_start}^{r} S(t-s) u dW ||_{L^p}`` for every grid ``r`` in ``start..t``."""
        hat = (self.partial[start:it + 1] - self.partial[start]) * propagator(
            self.grid, it * self.traj.dt)
        return lp_norm(self.grid, np.fft.ifft(hat, axis=-1), p)

    def q_star_pairs(self, it: int, p=10.0) -> float:
        """Exact grid supremum over all pairs ``r1 < r2 <= t`` (quadratic cost)."""
        if it == 0 or not self.active:
            return 0.0
        fields = np.fft.ifft(self.partial[:it + 1] * propagator(self.grid, it * self.traj.dt),
                             axis=-1)
        best = 0.0
        for i in range(it):
            best = max(best, float(lp_norm(self.grid, fields[i + 1:] - fields[i], p).max()))
        return best

    def q_star(self, it: int, p=10.0) -> float:
        """Upper bound ``2 sup_r ||int_0^r S(t-s) u dW||`` on the pair supremum."""
        if it == 0 or not self.active:
            return 0.0
        return 2.0 * float(self.one_sided(it, p).max())

    def q_star_series(self, p=10.0) -> np.ndarray:
        return np.array([self.q_star(i, p) for i in range(self.traj.n_steps + 1)])


def stochastic_convolution(traj: Trajectory, model: NoiseModel, path: BrownianPath,
                           r1: float, r2: float, t: float) -> np.ndarray:
    """``sum_{s_j in [r1, r2)} S(t - s_j)(u(s_j) dW_j)``."""
    return StochasticIntegrals(traj, model, path).integral(r1, r2, t)


def maximal_Q_star(traj: Trajectory, model: NoiseModel, path: BrownianPath, t: float) -> float:
    """Grid version of ``Q*(t)`` via the factor-2 one-sided relaxation."""
    return StochasticIntegrals(traj, model, path).q_star(traj.step_index(t))


# --------------------------------------------------------------------------- dissection

@dataclass(frozen=True)
class Dissection:
    breakpoints: np.ndarray        # tau_0 = 0 < ... < tau_K = T0
    interval_integrals: np.ndarray  # int_{tau_k}^{tau_{k+1}} |Q*|^5 dt
    breakpoint_steps: np.ndarray

    @property
    def count(self) -> int:
        return len(self.breakpoints) - 1

    def count_bound(self, q_x2_fifth: float) -> float:
        """``max{1, 2 ||Q*||_{X2}^5} + 1`` (the +1 absorbs grid snapping)."""
        return max(1.0, 2.0 * q_x2_fifth) + 1.0


def dissect(q_values, dt: float, n_steps: Optional[int] = None) -> Dissection:
    """Random dissection for a sampled ``Q*``: a new interval starts once the
    left-endpoint integral of ``Q*^5`` since the last breakpoint reaches 1."""
    q = np.asarray(q_values, dtype=float)
    n = len(q) - 1 if n_steps is None else n_steps
    steps, integrals = [0], []
    acc = 0.0
    for j in range(n):
        acc += q[j] ** 5 * dt
        if acc >= 1.0 and j + 1 < n:
            steps.append(j + 1)
            integrals.append(acc)
            acc = 0.0
    steps.append(n)
    integrals.append(acc)
    steps = np.array(steps)
    return Dissection(steps * dt, np.array(integrals), steps)


def build_dissection(traj: Trajectory, model: NoiseModel, path: BrownianPath,
                     T0: Optional[float] = None, q_values=None) -> Dissection:
    n = traj.n_steps if T0 is None else traj.step_index(T0)
    if q_values is None:
        q_values = StochasticIntegrals(traj, model, path).q_star_series()
    return dissect(q_values, traj.dt, n)


def q_star_x2_fifth(q_values, dt: float, n_steps: Optional[int] = None) -> float:
    """``||Q*||_{X2(0,T0)}^5`` with the same left-endpoint rule as :func:`dissect`."""
    q = np.asarray(q_values, dtype=float)
    n = len(q) - 1 if n_steps is None else n_steps
    return float(np.sum(q[:n] ** 5) * dt)


# --------------------------------------------------------------------------- deterministic Duhamel terms

def _running_duhamel(grid: Grid, s: np.ndarray, g: np.ndarray, dt: float) -> np.ndarray:
    """Rows ``n``: ``sum_{j<n} S(s_n - s_j) g_j dt`` (left-endpoint rule), ``n = 0..len(s)-1``."""
    hat = interaction_transform(grid, s, g)
    c = np.zeros_like(hat)
    np.cumsum(hat[:-1], axis=0, out=c[1:])
    return np.fft.ifft(c * propagator(grid, s), axis=-1) * dt


def correction_integral(traj: Trajectory, model: NoiseModel, a: float, t: float) -> np.ndarray:
    """``A(t) = int_a^t S(t-s)(F_Phi u(s)) ds`` by the left-endpoint rule."""
    ia, it = traj.step_index(a), traj.step_index(t)
    if it < ia:
        raise ContractViolation("need a <= t")
    u = traj.require_complete(it)
    if it == ia:
        return np.zeros(traj.grid.n_points, dtype=complex)
    s = traj.grid_times[ia:it]
    hat = interaction_transform(traj.grid, s, model.correction * u[ia:it]).sum(axis=0)
    return np.fft.ifft(hat * propagator(traj.grid, it * traj.dt)) * traj.dt


def correction_series(traj: Trajectory, model: NoiseModel, a: float, b: float) -> np.ndarray:
    """``A(t)`` for every grid ``t`` in ``[a, b]``."""
    ia, ib = _interval(traj, a, b)
    u = traj.require_complete(ib)
    return _running_duhamel(traj.grid, traj.grid_times[ia:ib + 1],
                            model.correction * u[ia:ib + 1], traj.dt)


def nonlinear_series(traj: Trajectory, a: float, b: float, epsilon: Optional[float] = None) -> np.ndarray:
    """``int_a^t S(t-s) N^eps(u(s)) ds`` for every grid ``t`` in ``[a, b]``."""
    eps = traj.config.epsilon if epsilon is None else epsilon
    ia, ib = _interval(traj, a, b)
    u = traj.require_complete(ib)[ia:ib + 1]
    return _running_duhamel(traj.grid, traj.grid_times[ia:ib + 1], u * _power(u, eps), traj.dt)


def bound_ratio(lhs: float, rhs: float) -> float:
    """Measured constant ``lhs / rhs`` (0 when both vanish, inf if only rhs does)."""
    if rhs == 0:
        return 0.0 if lhs == 0 else math.inf
    return lhs / rhs
