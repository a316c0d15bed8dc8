"""Periodic-box discretization of the real line and Fourier-multiplier operators.

Fields are plain complex numpy arrays whose last axis runs over the grid
points, so every operation here also works on stacks of fields (``(..., n)``).
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import ConfigurationError, ContractViolation

# A complex field is an ndarray of shape (..., grid.n_points).
ComplexField = np.ndarray


@dataclass(frozen=True)
class Grid:
    """Uniform grid on ``[-half_width, half_width)`` with ``n_points`` samples."""

    half_width: float
    n_points: int

    def __post_init__(self):
        if not (isinstance(self.half_width, (int, float)) and math.isfinite(self.half_width)
                and self.half_width > 0):
            raise ConfigurationError(f"half_width must be a positive number, got {self.half_width!r}")
        n = self.n_points
        if isinstance(n, bool) or not isinstance(n, (int, np.integer)):
            raise ConfigurationError(f"n_points must be an integer, got {n!r}")
        if n < 8 or n & (n - 1):
            raise ConfigurationError(f"n_points must be a power of two >= 8, got {n}")
        object.__setattr__(self, "half_width", float(self.half_width))
        object.__setattr__(self, "n_points", int(n))

    @property
    def length(self) -> float:
        return 2.0 * self.half_width

    @property
    def dx(self) -> float:
        return self.length / self.n_points

    @cached_property
    def x(self) -> np.ndarray:
        return -self.half_width + self.dx * np.arange(self.n_points)

    @cached_property
    def k(self) -> np.ndarray:
        """Wavenumbers ``pi * j / L`` in numpy FFT ordering."""
        return np.pi / self.half_width * np.fft.fftfreq(self.n_points, d=1.0 / self.n_points)

    @property
    def k_max(self) -> float:
        return np.pi * (self.n_points // 2) / self.half_width

    def refined(self, factor: int = 2) -> "Grid":
        return Grid(self.half_width, self.n_points * factor)

    def as_field(self, values, name: str = "field") -> np.ndarray:
        """Validate ``values`` as a (stack of) complex field(s) on this grid."""
        u = np.asarray(values, dtype=complex)
        if u.ndim == 0 or u.shape[-1] != self.n_points:
            raise ContractViolation(
                f"{name} has shape {u.shape}, expected last axis of length {self.n_points}")
        if not np.all(np.isfinite(u)):
            raise ContractViolation(f"{name} contains non-finite samples")
        return u


def make_grid(half_width: float, n_points: int) -> Grid:
    return Grid(half_width, n_points)


def propagator(grid: Grid, t) -> np.ndarray:
    """Fourier symbol ``exp(-i k^2 t)`` of the free flow ``exp(i t Laplacian)``."""
    t = np.asarray(t, dtype=float)
    return np.exp(-1j * np.multiply.outer(t, grid.k ** 2))


def free_propagate(grid: Grid, u: ComplexField, t) -> np.ndarray:
    """Apply the free Schroedinger group ``S(t)`` to ``u``.

    ``t`` may be a scalar or an array broadcasting against the leading axes of ``u``.
    """
    u = np.asarray(u, dtype=complex)
    if np.ndim(t) == 0 and t == 0:
        return u.copy()
    out = np.fft.ifft(np.fft.fft(u, axis=-1) * propagator(grid, t), axis=-1)
    if not np.all(np.isfinite(out)):
        raise ContractViolation("free_propagate produced non-finite values")
    return out


def derivative(grid: Grid, u: ComplexField) -> np.ndarray:
    """Spectral derivative (multiplier ``i k``)."""
    return np.fft.ifft(1j * grid.k * np.fft.fft(u, axis=-1), axis=-1)


def _check_exponent(p):
    p = float(p)
    if math.isnan(p) or p < 1:
        raise ConfigurationError(f"exponent p must be >= 1 or inf, got {p}")
    return p


def lp_norm(grid: Grid, u: ComplexField, p=2.0):
    """Discrete ``L^p`` norm ``(sum |u|^p dx)^(1/p)``; grid maximum for ``p = inf``."""
    p = _check_exponent(p)
    a = np.abs(np.asarray(u))
    if math.isinf(p):
        return a.max(axis=-1)
    if p == 2.0:
        return np.sqrt(np.sum(a * a, axis=-1) * grid.dx)
    if p == 1.0:
        return np.sum(a, axis=-1) * grid.dx
    return (np.sum(a ** p, axis=-1) * grid.dx) ** (1.0 / p)


def h1_norm(grid: Grid, u: ComplexField):
    """``(||u||_2^2 + ||u'||_2^2)^(1/2)`` with the derivative taken spectrally."""
    return np.hypot(lp_norm(grid, u, 2), lp_norm(grid, derivative(grid, u), 2))


def boundary_mass_fraction(grid: Grid, u: ComplexField, fraction: float = 0.1):
    """Share of the squared ``L^2`` norm sitting in the outer ``fraction`` of the box."""
    outer = np.abs(grid.x) >= (1.0 - fraction) * grid.half_width
    a2 = np.abs(np.asarray(u)) ** 2
    total = a2.sum(axis=-1)
    return np.divide(a2[..., outer].sum(axis=-1), total,
                     out=np.zeros_like(total), where=total > 0)


def spectral_tail_fraction(grid: Grid, u: ComplexField):
    """Share of spectral energy in the top octave ``|k| > k_max / 2``."""
    e = np.abs(np.fft.fft(u, axis=-1)) ** 2
    tail = np.abs(grid.k) > 0.5 * grid.k_max
    total = e.sum(axis=-1)
    return np.divide(e[..., tail].sum(axis=-1), total,
                     out=np.zeros_like(total), where=total > 0)


def gaussian(grid: Grid, amplitude=1.0, center=0.0, width=1.0, wavenumber=0.0) -> np.ndarray:
    """``amplitude * exp(-(x-c)^2 / (2 w^2) + i k0 x)`` sampled on the grid."""
    x = grid.x
    return amplitude * np.exp(-((x - center) ** 2) / (2.0 * width ** 2) + 1j * wavenumber * x)


def gaussian_free_solution(grid: Grid, t: float, width: float = 1.0) -> np.ndarray:
    """Closed-form free evolution of ``exp(-x^2 / (2 w^2))`` on the real line."""
    s = width ** 2 + 2j * t
    return np.sqrt(width ** 2 / s) * np.exp(-grid.x ** 2 / (2.0 * s))


def interaction_transform(grid: Grid, s, g) -> np.ndarray:
    """Fourier coefficients of ``S(-s_j) g_j`` for each row ``j``."""
    s = np.asarray(s, dtype=float)
    return np.fft.fft(g, axis=-1) * np.exp(1j * np.multiply.outer(s, grid.k ** 2))


def duhamel_sum(grid: Grid, s, g, t: float, weights=None) -> np.ndarray:
    """``sum_j w_j S(t - s_j) g_j`` for rows ``g_j`` attached to times ``s_j``."""
    g = np.asarray(g, dtype=complex)
    if len(g) == 0:
        return np.zeros(grid.n_points, dtype=complex)
    hat = interaction_transform(grid, s, g)
    if weights is not None:
        hat = hat * np.asarray(weights, dtype=float)[:, None]
    return np.fft.ifft(hat.sum(axis=0) * propagator(grid, t), axis=-1)
