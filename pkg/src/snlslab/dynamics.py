"""Split-step integration of the truncated stochastic NLS

    i du + u_xx dt = lambda * theta_m(||u||_{X2(0,t)}) |u|^(4-eps) u dt + u o dW

with Stratonovich (mass preserving) multiplicative noise.  Every substep is
either a unitary Fourier multiplier or a pointwise unit-modulus phase, so the
discrete L^2 norm is conserved to roundoff on every path.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from .errors import ConfigurationError, ContractViolation, NumericalFailure
from .noise import BrownianPath, NoiseModel
from .spectral import Grid, interaction_transform, lp_norm, propagator

SCHEMES = ("strang", "lie")


# --------------------------------------------------------------------------- configuration

@dataclass(frozen=True)
class SolverConfig:
    dt: float
    horizon: float
    epsilon: float = 0.0
    truncation_m: float = math.inf
    noise_on: bool = True
    nonlinearity: float = 1.0
    scheme: str = "strang"

    def __post_init__(self):
        if not (self.dt > 0 and math.isfinite(self.dt)):
            raise ConfigurationError(f"dt must be positive, got {self.dt}")
        if not (self.horizon >= 0 and math.isfinite(self.horizon)):
            raise ConfigurationError(f"horizon must be a nonnegative number, got {self.horizon}")
        steps = self.horizon / self.dt
        if abs(steps - round(steps)) > 1e-9 * max(1.0, steps):
            raise ConfigurationError(f"horizon {self.horizon} is not a whole number of steps dt={self.dt}")
        if not 0.0 <= self.epsilon < 4.0:
            raise ConfigurationError(f"epsilon must lie in [0, 4), got {self.epsilon}")
        if not self.truncation_m > 0:
            raise ConfigurationError(f"truncation_m must be positive or inf, got {self.truncation_m}")
        if not math.isfinite(self.nonlinearity):
            raise ConfigurationError("nonlinearity coefficient must be finite")
        if self.scheme not in SCHEMES:
            raise ConfigurationError(f"scheme must be one of {SCHEMES}, got {self.scheme!r}")

    @property
    def n_steps(self) -> int:
        return int(round(self.horizon / self.dt))

    def with_(self, **changes) -> "SolverConfig":
        return replace(self, **changes)


# --------------------------------------------------------------------------- truncation

def _bump(s):
    s = np.asarray(s, dtype=float)
    out = np.zeros_like(s)
    pos = s > 0
    out[pos] = np.exp(-1.0 / s[pos])
    return out


def theta(x):
    """Smooth even cutoff: 1 on ``[-1, 1]``, 0 outside ``(-2, 2)``."""
    a = np.abs(np.asarray(x, dtype=float))
    up, down = _bump(2.0 - a), _bump(a - 1.0)
    den = up + down
    out = np.divide(up, den, out=np.zeros_like(a), where=den > 0)
    out = np.where(a <= 1.0, 1.0, out)
    return out if out.ndim else float(out)


def theta_m(x, m):
    """``theta(x / m)``; ``m = inf`` disables the truncation."""
    m = np.asarray(m, dtype=float)
    ratio = np.divide(x, m, out=np.zeros(np.broadcast(x, m).shape), where=np.isfinite(m))
    return theta(ratio)


@dataclass
class TruncationState:
    """Running ``int_0^t ||u(s)||_{L^10}^5 ds`` (left-endpoint rule) and the cutoff value."""

    m: float = math.inf
    x2_accumulator: float = 0.0
    theta_value: float = 1.0

    def advance(self, l10_norm_at_step_start: float, dt: float) -> None:
        self.x2_accumulator += l10_norm_at_step_start ** 5 * dt
        self.theta_value = float(theta_m(self.x2_accumulator ** 0.2, self.m))


# --------------------------------------------------------------------------- substeps

def step_nonlinear(u, dt: float, epsilon: float = 0.0, theta_value: float = 1.0,
                   nonlinearity: float = 1.0) -> np.ndarray:
    """Exact flow of ``i u_t = lambda theta |u|^(4-eps) u``: a pointwise phase rotation."""
    u = np.asarray(u, dtype=complex)
    if not 0.0 <= theta_value <= 1.0:
        raise ContractViolation("theta_value must lie in [0, 1]")
    if not 0.0 <= epsilon < 4.0:
        raise ContractViolation("epsilon must lie in [0, 4)")
    coef = nonlinearity * theta_value * dt
    if coef == 0.0:
        return u.copy()
    return u * np.exp(-1j * coef * _power(u, epsilon))


def step_noise(u, dW) -> np.ndarray:
    """Stratonovich noise substep ``u -> u * exp(-i dW)`` for a real increment field."""
    dW = np.asarray(dW)
    if np.iscomplexobj(dW):
        if np.any(dW.imag != 0):
            raise ContractViolation("noise increments must be real-valued")
        dW = dW.real
    return np.asarray(u, dtype=complex) * np.exp(-1j * dW)


def _power(u, epsilon):
    """``|u|^(4-eps)`` with per-row exponents; ``0^p = 0``."""
    a2 = u.real * u.real + u.imag * u.imag
    eps = np.asarray(epsilon, dtype=float)
    if not np.any(eps):
        return a2 * a2
    return a2 ** ((4.0 - eps) / 2.0)


# --------------------------------------------------------------------------- batched kernel

@dataclass
class BatchRun:
    """Output of :func:`integrate_batch`; norm arrays have the time index first."""

    final: np.ndarray
    l2: np.ndarray          # (N+1, *batch)
    l10: np.ndarray         # (N+1, *batch)
    x2_acc: np.ndarray      # (N+1, *batch)
    theta: np.ndarray       # (N+1, *batch); theta[j] is used on step j
    failed: np.ndarray      # (*batch,) bool
    failed_step: np.ndarray  # (*batch,) int, -1 if fine
    snapshots: list = field(default_factory=list)
    snapshot_steps: list = field(default_factory=list)


def integrate_batch(grid: Grid, u0, dt: float, n_steps: int, *, epsilon=0.0,
                    truncation_m=math.inf, nonlinearity=1.0, scheme: str = "strang",
                    noise: Optional[Callable[[int], np.ndarray]] = None,
                    observer: Optional[Callable[[int, np.ndarray], None]] = None,
                    snapshot_stride: Optional[int] = None) -> BatchRun:
    """Advance a stack of initial data ``u0`` of shape ``(*batch, n)``.

    ``epsilon``, ``truncation_m`` and ``nonlinearity`` broadcast against the
    batch shape.  ``noise(j)`` returns the real increment field for step ``j``
    (broadcastable to ``u0``).  ``observer(j, u)`` sees the state at every grid
    time ``t_j``.  Rows never interact, so results do not depend on batching.
    """
    u = np.array(u0, dtype=complex)
    batch = u.shape[:-1]
    eps = np.broadcast_to(np.asarray(epsilon, dtype=float), batch)[..., None]
    m = np.broadcast_to(np.asarray(truncation_m, dtype=float), batch)
    lam = np.broadcast_to(np.asarray(nonlinearity, dtype=float), batch)
    if scheme not in SCHEMES:
        raise ConfigurationError(f"unknown scheme {scheme!r}")
    if scheme == "strang":
        lin = propagator(grid, 0.5 * dt)
    else:
        lin = propagator(grid, dt)
    zero_eps = not np.any(eps)
    truncating = bool(np.any(np.isfinite(m)))

    l2 = np.empty((n_steps + 1,) + batch)
    l10 = np.empty((n_steps + 1,) + batch)
    acc = np.zeros((n_steps + 1,) + batch)
    th = np.ones((n_steps + 1,) + batch)
    failed_step = np.full(batch, -1, dtype=int)
    run = BatchRun(u, l2, l10, acc, th, np.zeros(batch, bool), failed_step)

    def record(j, state):
        l2[j] = lp_norm(grid, state, 2)
        l10[j] = lp_norm(grid, state, 10)
        bad = ~np.isfinite(l2[j]) & (failed_step < 0)
        if np.any(bad):
            failed_step[bad] = j
        if snapshot_stride and (j % snapshot_stride == 0 or j == n_steps):
            run.snapshots.append(state.copy())
            run.snapshot_steps.append(j)
        if observer is not None:
            observer(j, state)

    record(0, u)
    for j in range(n_steps):
        if j > 0:
            acc[j] = acc[j - 1] + l10[j - 1] ** 5 * dt
            if truncating:
                th[j] = theta_m(acc[j] ** 0.2, m)
        coef = (lam * th[j] * dt)[..., None]
        if scheme == "strang":
            u = np.fft.ifft(np.fft.fft(u, axis=-1) * lin, axis=-1)
        a2 = u.real * u.real + u.imag * u.imag
        phase = coef * (a2 * a2 if zero_eps else a2 ** ((4.0 - eps) / 2.0))
        if noise is not None:
            phase = phase + noise(j)
        u = u * np.exp(-1j * phase)
        u = np.fft.ifft(np.fft.fft(u, axis=-1) * lin, axis=-1)
        record(j + 1, u)
    if n_steps > 0:
        acc[n_steps] = acc[n_steps - 1] + l10[n_steps - 1] ** 5 * dt
        if truncating:
            th[n_steps] = theta_m(acc[n_steps] ** 0.2, m)
    run.final = u
    run.failed = failed_step >= 0
    return run


# --------------------------------------------------------------------------- trajectories

@dataclass(eq=False)
class Trajectory:
    grid: Grid
    config: SolverConfig
    snapshot_steps: np.ndarray   # indices into the time grid
    snapshots: np.ndarray        # (n_snap, n)
    l2: np.ndarray               # (N+1,) per grid time
    l10: np.ndarray              # (N+1,)
    theta: np.ndarray            # (N+1,)
    x2_acc: np.ndarray           # (N+1,)
    lineage: tuple = (None, None)

    @property
    def dt(self) -> float:
        return self.config.dt

    @property
    def n_steps(self) -> int:
        return len(self.l2) - 1

    @property
    def times(self) -> np.ndarray:
        return self.dt * np.asarray(self.snapshot_steps)

    @property
    def grid_times(self) -> np.ndarray:
        return self.dt * np.arange(self.n_steps + 1)

    @property
    def final(self) -> np.ndarray:
        return self.snapshots[-1]

    @property
    def complete(self) -> bool:
        """True when every grid time has a snapshot (needed by the Duhamel diagnostics)."""
        return len(self.snapshot_steps) == self.n_steps + 1

    def mass_drift(self) -> float:
        m0 = self.l2[0]
        if m0 == 0:
            return float(np.max(self.l2))
        return float(np.max(np.abs(self.l2 - m0)) / m0)

    def step_index(self, t: float) -> int:
        j = t / self.dt
        if abs(j - round(j)) > 1e-9 * max(1.0, j) or not 0 <= round(j) <= self.n_steps:
            raise ContractViolation(f"time {t} is not a grid time of this trajectory")
        return int(round(j))

    def snapshot_at(self, t: float) -> np.ndarray:
        j = self.step_index(t)
        pos = np.searchsorted(self.snapshot_steps, j)
        if pos == len(self.snapshot_steps) or self.snapshot_steps[pos] != j:
            raise ContractViolation(f"no snapshot retained at t={t}")
        return self.snapshots[pos]

    def require_complete(self, upto: Optional[int] = None) -> np.ndarray:
        """All snapshots ``0..upto``; raises if the stride dropped any of them."""
        upto = self.n_steps if upto is None else upto
        steps = np.asarray(self.snapshot_steps)
        if len(steps) < upto + 1 or not np.array_equal(steps[:upto + 1], np.arange(upto + 1)):
            raise ContractViolation("operation needs every snapshot; evolve with snapshot_stride=1")
        return self.snapshots[:upto + 1]


def _noise_source(model, path, config, n_steps):
    if not config.noise_on or model is None or model.n_modes == 0:
        return None, None
    if path is None:
        raise ContractViolation("noise is on but no BrownianPath was given")
    if path.n_modes != model.n_modes:
        raise ContractViolation("path and noise model disagree on the number of modes")
    if abs(path.dt - config.dt) > 1e-12 * config.dt:
        raise ConfigurationError(f"path dt {path.dt} differs from solver dt {config.dt}")
    if path.n_steps < n_steps:
        raise ConfigurationError("Brownian path does not cover the horizon")
    fields = model.field(path.increments[:, :n_steps].T)  # (N, n)
    return fields, (lambda j: fields[j])


def evolve(u0, config: SolverConfig, model: Optional[NoiseModel] = None,
           path: Optional[BrownianPath] = None, grid: Optional[Grid] = None,
           snapshot_stride: int = 1) -> Trajectory:
    """Integrate one path over ``[0, config.horizon]`` and keep its history."""
    if grid is None:
        if model is None:
            raise ConfigurationError("a grid is needed when no noise model is given")
        grid = model.grid
    u0 = grid.as_field(u0, "initial data")
    if u0.ndim != 1:
        raise ContractViolation("evolve takes a single field; use integrate_batch for stacks")
    if snapshot_stride < 1:
        raise ConfigurationError("snapshot_stride must be >= 1")
    n_steps = config.n_steps
    _, noise = _noise_source(model, path, config, n_steps)
    run = integrate_batch(grid, u0, config.dt, n_steps, epsilon=config.epsilon,
                          truncation_m=config.truncation_m, nonlinearity=config.nonlinearity,
                          scheme=config.scheme, noise=noise, snapshot_stride=snapshot_stride)
    if run.failed:
        raise NumericalFailure(f"non-finite state at step {int(run.failed_step)}",
                               step=int(run.failed_step),
                               path_index=None if path is None else path.path_index)
    lineage = (None, None) if path is None else path.lineage
    return Trajectory(grid, config, np.array(run.snapshot_steps), np.array(run.snapshots),
                      run.l2, run.l10, run.theta, run.x2_acc, lineage)


# --------------------------------------------------------------------------- Duhamel check

def _trapezoid_weights(n):
    w = np.ones(n + 1)
    w[0] = w[-1] = 0.5
    return w


def duhamel_residuals(traj: Trajectory, model: Optional[NoiseModel] = None,
                      path: Optional[BrownianPath] = None, quadrature: str = "trapezoid") -> np.ndarray:
    """L^2 distance between ``u(t_n)`` and the quadrature of its mild formulation, for every ``n``.

    The Ito integral is always a left-point sum.  The nonlinear and correction
    integrals use the trapezoid rule by default (``quadrature="left"`` for the
    left-endpoint rule).
    """
    grid, cfg = traj.grid, traj.config
    u = traj.require_complete()
    n = traj.n_steps
    dt = cfg.dt
    s = traj.grid_times
    k2 = grid.k ** 2
    if quadrature not in ("trapezoid", "left"):
        raise ConfigurationError("quadrature must be 'trapezoid' or 'left'")

    def running(hat, trapezoid):
        # hat[j] holds the transform of S(-s_j) g_j; return sums over j < n (left) or trapezoid.
        c = np.zeros_like(hat)
        c[1:] = np.cumsum(hat[:-1], axis=0)
        if trapezoid:
            c[1:] = c[1:] - 0.5 * hat[0] + 0.5 * hat[1:]
        return c

    trap = quadrature == "trapezoid"
    total = np.repeat(np.fft.fft(u[0])[None, :], n + 1, axis=0)
    lam = cfg.nonlinearity
    if lam != 0.0:
        nl = lam * traj.theta[:, None] * u * _power(u, cfg.epsilon)
        total -= 1j * dt * running(interaction_transform(grid, s, nl), trap)
    fields, _ = _noise_source(model, path, cfg, n)
    if fields is not None:
        ito = interaction_transform(grid, s[:n], u[:n] * fields)
        c = np.zeros((n + 1, grid.n_points), dtype=complex)
        c[1:] = np.cumsum(ito, axis=0)
        total -= 1j * c
        corr = interaction_transform(grid, s, model.correction * u)
        total -= 0.5 * dt * running(corr, trap)
    rhs = np.fft.ifft(total * np.exp(-1j * np.outer(s, k2)), axis=-1)
    return lp_norm(grid, u - rhs, 2)


def duhamel_residual(traj: Trajectory, model: Optional[NoiseModel] = None,
                     path: Optional[BrownianPath] = None, t: Optional[float] = None,
                     quadrature: str = "trapezoid") -> float:
    j = traj.n_steps if t is None else traj.step_index(t)
    return float(duhamel_residuals(traj, model, path, quadrature)[j])
