"""Finite-mode spatially coloured noise and reproducible Brownian increments.

The noise is ``W(t, x) = sum_k B_k(t) * lambda_k * phi_k(x)`` with real profiles
``phi_k``.  Brownian increments come from a counter-based generator (Philox)
keyed on ``(master_seed, path_index)`` with the counter encoding
``(step_block, mode)``, so any increment can be regenerated on its own.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Sequence

import numpy as np

from .errors import ConfigurationError, ContractViolation
from .spectral import Grid, lp_norm

MAX_MODES = 64


# --------------------------------------------------------------------------- profiles

def hermite_function(x: np.ndarray, order: int) -> np.ndarray:
    """L^2-normalised Hermite function of the given order (three-term recurrence)."""
    if order < 0:
        raise ConfigurationError("Hermite order must be nonnegative")
    h_prev = np.pi ** -0.25 * np.exp(-0.5 * x ** 2)
    if order == 0:
        return h_prev
    h = math.sqrt(2.0) * x * h_prev
    for n in range(1, order):
        h, h_prev = math.sqrt(2.0 / (n + 1)) * x * h - math.sqrt(n / (n + 1)) * h_prev, h
    return h


def _profile_gaussian(x, center=0.0, width=1.0):
    # exp(-(x-c)^2 / w^2); width=1 gives V(x) = exp(-x^2)
    return np.exp(-((x - center) / width) ** 2)


def _profile_hermite(x, order=0, scale=1.0, center=0.0):
    return hermite_function((x - center) / scale, int(order))


def _profile_sech(x, center=0.0, width=1.0):
    return 1.0 / np.cosh((x - center) / width)


PROFILES: dict[str, Callable[..., np.ndarray]] = {
    "gaussian": _profile_gaussian,
    "hermite": _profile_hermite,
    "sech": _profile_sech,
}


def evaluate_profile(grid: Grid, descriptor) -> np.ndarray:
    """Sample a profile given as a named descriptor, a callable of ``x``, or raw samples.

    Named descriptors are mappings like ``{"name": "hermite", "order": 2, "scale": 2.0}``.
    """
    if isinstance(descriptor, dict):
        params = dict(descriptor)
        name = params.pop("name", None)
        if name not in PROFILES:
            raise ConfigurationError(f"unknown noise profile {name!r}; known: {sorted(PROFILES)}")
        try:
            values = PROFILES[name](grid.x, **params)
        except TypeError as exc:
            raise ConfigurationError(f"bad parameters for profile {name!r}: {exc}") from None
    elif callable(descriptor):
        values = descriptor(grid.x)
    else:
        values = descriptor
    values = np.asarray(values)
    if values.shape != (grid.n_points,):
        raise ConfigurationError(f"profile has shape {values.shape}, expected ({grid.n_points},)")
    if np.iscomplexobj(values):
        if np.any(values.imag != 0):
            raise ConfigurationError("noise profiles must be real-valued")
        values = values.real
    values = values.astype(float)
    if not np.all(np.isfinite(values)):
        raise ConfigurationError("noise profile contains non-finite samples")
    return values


# --------------------------------------------------------------------------- model

@dataclass(frozen=True, eq=False)
class NoiseModel:
    """Modes ``(lambda_k, phi_k)`` and the Ito-Stratonovich correction ``F = sum (lambda_k phi_k)^2``."""

    grid: Grid
    amplitudes: np.ndarray  # (K,)
    profiles: np.ndarray    # (K, n), real

    def __post_init__(self):
        amps = np.asarray(self.amplitudes, dtype=float).reshape(-1)
        profs = np.asarray(self.profiles, dtype=float).reshape(len(amps), self.grid.n_points)
        amps.setflags(write=False)
        profs.setflags(write=False)
        object.__setattr__(self, "amplitudes", amps)
        object.__setattr__(self, "profiles", profs)

    @property
    def n_modes(self) -> int:
        return len(self.amplitudes)

    @cached_property
    def scaled_profiles(self) -> np.ndarray:
        """``lambda_k * phi_k`` as a ``(K, n)`` array (the images ``Phi e_k``)."""
        out = self.amplitudes[:, None] * self.profiles
        out.setflags(write=False)
        return out

    @cached_property
    def correction(self) -> np.ndarray:
        """``F_Phi(x) = sum_k (lambda_k phi_k(x))^2``; identically zero without modes."""
        out = np.zeros(self.grid.n_points)
        for row in self.scaled_profiles:
            out += row * row
        out.setflags(write=False)
        return out

    def trace(self) -> float:
        """Trace surrogate ``sum_k lambda_k^2 ||phi_k||_2^2``."""
        return float(np.sum(self.amplitudes ** 2 * lp_norm(self.grid, self.profiles, 2) ** 2))

    def field(self, coefficients) -> np.ndarray:
        """``sum_k c_k lambda_k phi_k`` for coefficients of shape ``(..., K)``.

        The sum runs mode by mode so each output row depends only on its own
        coefficients (results do not change with the batch layout).
        """
        c = np.asarray(coefficients, dtype=float)
        out = np.zeros(c.shape[:-1] + (self.grid.n_points,))
        for k in range(self.n_modes):
            out += c[..., k, None] * self.scaled_profiles[k]
        return out

    def mixed(self, orthogonal: np.ndarray) -> "NoiseModel":
        """Same operator expressed in a rotated basis: new images ``sum_j O_kj Phi e_j``."""
        o = np.asarray(orthogonal, dtype=float)
        return NoiseModel(self.grid, np.ones(self.n_modes), o @ self.scaled_profiles)

    def scaled(self, factor: float) -> "NoiseModel":
        return NoiseModel(self.grid, factor * self.amplitudes, self.profiles)

    def on_grid(self, grid: Grid, mode_spec=None) -> "NoiseModel":
        """Rebuild on another grid; requires the original ``mode_spec`` for non-trivial models."""
        if self.n_modes == 0:
            return NoiseModel(grid, np.zeros(0), np.zeros((0, grid.n_points)))
        if mode_spec is None:
            raise ConfigurationError("mode_spec is needed to rebuild a noise model on a new grid")
        return build_noise_model(grid, mode_spec)


def build_noise_model(grid: Grid, mode_spec: Sequence) -> NoiseModel:
    """Build a :class:`NoiseModel` from ``[(amplitude, profile_descriptor), ...]``."""
    mode_spec = list(mode_spec)
    if len(mode_spec) > MAX_MODES:
        raise ConfigurationError(f"at most {MAX_MODES} noise modes are supported")
    amps, profs = [], []
    for entry in mode_spec:
        try:
            amp, desc = entry
        except (TypeError, ValueError):
            raise ConfigurationError(f"mode entry must be (amplitude, profile), got {entry!r}") from None
        amp = float(amp)
        if not math.isfinite(amp):
            raise ConfigurationError("noise amplitudes must be finite")
        amps.append(amp)
        profs.append(evaluate_profile(grid, desc))
    profiles = np.array(profs) if profs else np.zeros((0, grid.n_points))
    return NoiseModel(grid, np.array(amps, dtype=float), profiles)


def hermite_modes(n_modes: int, amplitude: float = 1.0, decay: float = 0.5,
                  scale: float = 2.0) -> list:
    """Default mode list: Hermite functions with geometrically decaying amplitudes."""
    return [(amplitude * decay ** k, {"name": "hermite", "order": k, "scale": scale})
            for k in range(n_modes)]


# --------------------------------------------------------------------------- Brownian paths

_TWO_PI = 2.0 * np.pi


def _path_key(master_seed: int, path_index: int) -> np.ndarray:
    return np.random.SeedSequence([int(master_seed), int(path_index), 0x5EED]).generate_state(
        2, np.uint64)


def standard_normals(master_seed: int, path_index: int, mode: int, start: int, stop: int) -> np.ndarray:
    """Standard normals for primitive steps ``start..stop-1`` of one (path, mode) stream.

    Counter block ``b`` yields four 64-bit words, turned into four normals by
    Box-Muller, so step ``j`` lives in block ``j // 4``, slot ``j % 4``.
    """
    if stop <= start:
        return np.zeros(0)
    b0, b1 = start // 4, (stop + 3) // 4
    bitgen = np.random.Philox(key=_path_key(master_seed, path_index),
                              counter=np.array([b0, mode, 0, 0], dtype=np.uint64))
    raw = bitgen.random_raw(4 * (b1 - b0)).reshape(-1, 2, 2)
    uni = ((raw >> np.uint64(11)).astype(float) + 0.5) * 2.0 ** -53
    r = np.sqrt(-2.0 * np.log(uni[:, 0, :]))
    ang = _TWO_PI * uni[:, 1, :]
    z = np.stack([r * np.cos(ang), r * np.sin(ang)], axis=-1).reshape(-1)
    off = start - 4 * b0
    return z[off:off + (stop - start)]


@dataclass(frozen=True, eq=False)
class BrownianPath:
    """Per-mode Brownian increments on a uniform time grid.

    Primitive increments have variance ``dt / refinement``; each step of this
    path is the pairwise sum of ``refinement`` (a power of two) primitive ones,
    so :meth:`coarsened` paths are literally the same Brownian motion.
    """

    master_seed: int
    path_index: int
    n_modes: int
    dt: float
    n_steps: int
    refinement: int = 1
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        if self.dt <= 0 or self.n_steps < 0 or self.n_modes < 0:
            raise ConfigurationError("BrownianPath needs dt > 0 and nonnegative sizes")
        r = self.refinement
        if r < 1 or r & (r - 1):
            raise ConfigurationError("refinement must be a power of two")

    @property
    def lineage(self) -> tuple:
        return (int(self.master_seed), int(self.path_index))

    @property
    def fine_dt(self) -> float:
        return self.dt / self.refinement

    def primitive(self, mode: int, start: int, stop: int) -> np.ndarray:
        """Primitive increments ``start..stop-1`` for one mode (regenerated from keys)."""
        return math.sqrt(self.fine_dt) * standard_normals(
            self.master_seed, self.path_index, mode, start, stop)

    @property
    def increments(self) -> np.ndarray:
        """``(n_modes, n_steps)`` array of step increments ``dB[k, j]``."""
        if "inc" not in self._cache:
            n_fine = self.n_steps * self.refinement
            inc = np.array([self.primitive(k, 0, n_fine) for k in range(self.n_modes)])
            inc = inc.reshape(self.n_modes, n_fine)
            r = self.refinement
            while r > 1:
                inc = inc.reshape(self.n_modes, -1, 2).sum(axis=-1)
                r //= 2
            inc.setflags(write=False)
            self._cache["inc"] = inc
        return self._cache["inc"]

    def coarsened(self) -> "BrownianPath":
        if self.n_steps % 2:
            raise ConfigurationError("cannot coarsen a path with an odd number of steps")
        return BrownianPath(self.master_seed, self.path_index, self.n_modes,
                            2.0 * self.dt, self.n_steps // 2, 2 * self.refinement)

    def prefix(self, n_steps: int) -> "BrownianPath":
        return BrownianPath(self.master_seed, self.path_index, self.n_modes,
                            self.dt, n_steps, self.refinement)


def brownian_ladder(master_seed: int, path_index: int, n_modes: int, dt_fine: float,
                    n_fine_steps: int, levels: int) -> list[BrownianPath]:
    """Finest-first list of ``levels`` paths, each step twice as long as the previous."""
    path = BrownianPath(master_seed, path_index, n_modes, dt_fine, n_fine_steps)
    out = [path]
    for _ in range(levels - 1):
        path = path.coarsened()
        out.append(path)
    return out


def sample_increment(model: NoiseModel, path: BrownianPath, step: int) -> np.ndarray:
    """Real field ``dW_j(x) = sum_k dB[k, j] lambda_k phi_k(x)``."""
    if not 0 <= step < path.n_steps:
        raise IndexError(f"step {step} outside 0..{path.n_steps - 1}")
    if path.n_modes != model.n_modes:
        raise ContractViolation("path and noise model disagree on the number of modes")
    if model.n_modes == 0:
        return np.zeros(model.grid.n_points)
    return model.field(path.increments[:, step])


def radonifying_norm_mc(model: NoiseModel, p=2.0, n_samples: int = 1000, seed: int = 0,
                        multiplier: np.ndarray | None = None) -> tuple[float, float]:
    """Monte Carlo estimate of ``(E || sum_k g_k lambda_k phi_k ||_{L^p}^2)^(1/2)``.

    ``multiplier`` (a field ``sigma``) estimates the norm of ``sigma * Phi``
    instead.  Returns ``(estimate, standard_error)``.
    """
    if n_samples < 100:
        raise ConfigurationError("radonifying_norm_mc needs at least 100 samples")
    if model.n_modes == 0:
        return 0.0, 0.0
    gam = np.random.default_rng(seed).standard_normal((n_samples, model.n_modes))
    samples = model.field(gam)
    if multiplier is not None:
        samples = samples * np.asarray(multiplier)
    sq = lp_norm(model.grid, samples, p) ** 2
    mean = float(sq.mean())
    if mean == 0.0:
        return 0.0, 0.0
    se_mean = float(sq.std(ddof=1) / math.sqrt(n_samples))
    est = math.sqrt(mean)
    return est, se_mean / (2.0 * est)
