"""YAML experiment configuration: strict parsing, defaults, and an exact echo."""
from __future__ import annotations

import math
import os
from dataclasses import asdict, dataclass, field, fields
from typing import Any, Optional

import yaml

from .dynamics import SCHEMES, SolverConfig
from .ensemble import FAMILIES, InitialDataSpec
from .errors import ConfigurationError
from .noise import MAX_MODES, NoiseModel, build_noise_model, hermite_modes
from .spectral import Grid

OUTPUT_ENV = "SNLSLAB_OUT"
DEFAULT_OUTPUT = "snlslab-out"
RECORD_FORMATS = ("npy", "csv", "jsonl", "txt")


def _number(value, name, *, integer=False, allow_inf=False):
    if isinstance(value, str) and allow_inf and value.strip().lower() in ("inf", "+inf", "infinity"):
        return math.inf
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigurationError(f"{name} must be a number, got {value!r}")
    if integer:
        if isinstance(value, float) and not value.is_integer():
            raise ConfigurationError(f"{name} must be an integer, got {value!r}")
        return int(value)
    value = float(value)
    if math.isnan(value) or (math.isinf(value) and not allow_inf):
        raise ConfigurationError(f"{name} must be finite, got {value!r}")
    return value


def _number_list(value, name, allow_inf=False):
    if not isinstance(value, (list, tuple)) or not value:
        raise ConfigurationError(f"{name} must be a nonempty list")
    return [_number(v, f"{name}[{i}]", allow_inf=allow_inf) for i, v in enumerate(value)]


def _flag(value, name):
    if not isinstance(value, bool):
        raise ConfigurationError(f"{name} must be true or false, got {value!r}")
    return value


def _check_keys(block: str, data, cls):
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigurationError(f"block {block!r} must be a mapping")
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigurationError(f"unknown key(s) in {block!r}: {', '.join(map(str, unknown))}")
    return data


@dataclass(frozen=True)
class GridBlock:
    half_width: float = 16.0
    n_points: int = 256

    @classmethod
    def parse(cls, data) -> "GridBlock":
        d = _check_keys("grid", data, cls)
        out = cls(_number(d.get("half_width", cls.half_width), "grid.half_width"),
                  _number(d.get("n_points", cls.n_points), "grid.n_points", integer=True))
        out.build()
        return out

    def build(self) -> Grid:
        return Grid(self.half_width, self.n_points)


@dataclass(frozen=True)
class SolverBlock:
    dt: float = 1e-3
    horizon: float = 0.5
    epsilon: float = 0.0
    eps_ladder: tuple = (0.4, 0.2, 0.1, 0.05)
    truncation_m: float = math.inf
    m_ladder: tuple = (1.0, 2.0, 4.0, 8.0, math.inf)
    nonlinearity: float = 1.0
    scheme: str = "strang"
    noise_on: bool = True
    delta0: float = 0.1

    @classmethod
    def parse(cls, data) -> "SolverBlock":
        d = _check_keys("solver", data, cls)
        g = lambda k: d.get(k, getattr(cls, k))
        scheme = g("scheme")
        if scheme not in SCHEMES:
            raise ConfigurationError(f"solver.scheme must be one of {SCHEMES}, got {scheme!r}")
        out = cls(
            dt=_number(g("dt"), "solver.dt"),
            horizon=_number(g("horizon"), "solver.horizon"),
            epsilon=_number(g("epsilon"), "solver.epsilon"),
            eps_ladder=tuple(_number_list(g("eps_ladder"), "solver.eps_ladder")),
            truncation_m=_number(g("truncation_m"), "solver.truncation_m", allow_inf=True),
            m_ladder=tuple(_number_list(g("m_ladder"), "solver.m_ladder", allow_inf=True)),
            nonlinearity=_number(g("nonlinearity"), "solver.nonlinearity"),
            scheme=scheme,
            noise_on=_flag(g("noise_on"), "solver.noise_on"),
            delta0=_number(g("delta0"), "solver.delta0"),
        )
        out.build()
        for e in out.eps_ladder:
            out.build().with_(epsilon=e)
        for m in out.m_ladder:
            out.build().with_(truncation_m=m)
        if out.delta0 <= 0:
            raise ConfigurationError("solver.delta0 must be positive")
        return out

    def build(self) -> SolverConfig:
        return SolverConfig(self.dt, self.horizon, self.epsilon, self.truncation_m, self.noise_on,
                            self.nonlinearity, self.scheme)


@dataclass(frozen=True)
class NoiseBlock:
    """Either an explicit ``modes`` list or the default Hermite family."""

    n_modes: int = 4
    amplitude: float = 1.0
    decay: float = 0.5
    scale: float = 2.0
    modes: Optional[list] = None

    @classmethod
    def parse(cls, data) -> "NoiseBlock":
        d = _check_keys("noise", data, cls)
        g = lambda k: d.get(k, getattr(cls, k))
        modes = g("modes")
        if modes is not None:
            if not isinstance(modes, list):
                raise ConfigurationError("noise.modes must be a list")
            clean = []
            for i, m in enumerate(modes):
                if not isinstance(m, dict) or set(m) - {"amplitude", "profile"} or "profile" not in m:
                    raise ConfigurationError(
                        f"noise.modes[{i}] must be a mapping with 'amplitude' and 'profile'")
                prof = m["profile"]
                if not isinstance(prof, dict) or "name" not in prof:
                    raise ConfigurationError(f"noise.modes[{i}].profile needs a 'name'")
                prof = {k: (v if k == "name" else _number(v, f"noise.modes[{i}].profile.{k}"))
                        for k, v in prof.items()}
                clean.append({"amplitude": _number(m.get("amplitude", 1.0),
                                                   f"noise.modes[{i}].amplitude"),
                              "profile": prof})
            modes = clean
        out = cls(_number(g("n_modes"), "noise.n_modes", integer=True),
                  _number(g("amplitude"), "noise.amplitude"), _number(g("decay"), "noise.decay"),
                  _number(g("scale"), "noise.scale"), modes)
        n = len(out.modes) if out.modes is not None else out.n_modes
        if not 0 <= n <= MAX_MODES:
            raise ConfigurationError(f"noise needs between 0 and {MAX_MODES} modes, got {n}")
        if out.modes is not None and out.n_modes != len(out.modes):
            raise ConfigurationError("noise.n_modes disagrees with the length of noise.modes")
        return out

    def mode_spec(self) -> list:
        if self.modes is not None:
            return [(m["amplitude"], dict(m["profile"])) for m in self.modes]
        return hermite_modes(self.n_modes, self.amplitude, self.decay, self.scale)

    def build(self, grid: Grid) -> NoiseModel:
        return build_noise_model(grid, self.mode_spec())


@dataclass(frozen=True)
class InitialBlock:
    family: str = "gaussian"
    mass: float = 0.1
    width: float = 1.0
    center: float = 0.0
    wavenumber: float = 0.0
    n_bumps: int = 3
    randomize: bool = False
    amplitude_spread: float = 0.0
    small_data: bool = True

    @classmethod
    def parse(cls, data) -> "InitialBlock":
        d = _check_keys("initial", data, cls)
        g = lambda k: d.get(k, getattr(cls, k))
        if g("family") not in FAMILIES:
            raise ConfigurationError(f"initial.family must be one of {FAMILIES}")
        return cls(g("family"), _number(g("mass"), "initial.mass"),
                   _number(g("width"), "initial.width"), _number(g("center"), "initial.center"),
                   _number(g("wavenumber"), "initial.wavenumber"),
                   _number(g("n_bumps"), "initial.n_bumps", integer=True),
                   _flag(g("randomize"), "initial.randomize"),
                   _number(g("amplitude_spread"), "initial.amplitude_spread"),
                   _flag(g("small_data"), "initial.small_data"))

    def build(self, delta0: float) -> InitialDataSpec:
        return InitialDataSpec(self.family, self.mass, self.width, self.center, self.wavenumber,
                               self.n_bumps, self.randomize, self.amplitude_spread, delta0,
                               self.small_data)


@dataclass(frozen=True)
class EnsembleBlock:
    n_paths: int = 100
    master_seed: int = 0
    rho0: float = 6.0
    rho_list: tuple = (5.0, 6.0, 12.0, 24.0)
    kappa_ladder: tuple = (1e-2, 1e-3, 1e-4)
    threads: int = 1
    chunk_size: int = 50

    @classmethod
    def parse(cls, data) -> "EnsembleBlock":
        d = _check_keys("ensemble", data, cls)
        g = lambda k: d.get(k, getattr(cls, k))
        out = cls(_number(g("n_paths"), "ensemble.n_paths", integer=True),
                  _number(g("master_seed"), "ensemble.master_seed", integer=True),
                  _number(g("rho0"), "ensemble.rho0"),
                  tuple(_number_list(g("rho_list"), "ensemble.rho_list")),
                  tuple(_number_list(g("kappa_ladder"), "ensemble.kappa_ladder")),
                  _number(g("threads"), "ensemble.threads", integer=True),
                  _number(g("chunk_size"), "ensemble.chunk_size", integer=True))
        if out.n_paths < 1 or out.threads < 1 or out.chunk_size < 1:
            raise ConfigurationError("n_paths, threads and chunk_size must be >= 1")
        if out.master_seed < 0:
            raise ConfigurationError("ensemble.master_seed must be nonnegative")
        if out.rho0 < 1 or any(r < 1 for r in out.rho_list):
            raise ConfigurationError("moment exponents must be >= 1")
        if any(k < 0 for k in out.kappa_ladder):
            raise ConfigurationError("kappa values must be nonnegative")
        return out


@dataclass(frozen=True)
class OutputBlock:
    directory: Optional[str] = None
    snapshot_stride: int = 1
    formats: tuple = RECORD_FORMATS

    @classmethod
    def parse(cls, data) -> "OutputBlock":
        d = _check_keys("output", data, cls)
        g = lambda k: d.get(k, getattr(cls, k))
        directory = g("directory")
        if directory is not None and not isinstance(directory, str):
            raise ConfigurationError("output.directory must be a string")
        formats = g("formats")
        if not isinstance(formats, (list, tuple)) or not set(formats) <= set(RECORD_FORMATS):
            raise ConfigurationError(f"output.formats must be a subset of {RECORD_FORMATS}")
        out = cls(directory, _number(g("snapshot_stride"), "output.snapshot_stride", integer=True),
                  tuple(formats))
        if out.snapshot_stride < 1:
            raise ConfigurationError("output.snapshot_stride must be >= 1")
        return out


BLOCKS = {"grid": GridBlock, "solver": SolverBlock, "noise": NoiseBlock,
          "initial": InitialBlock, "ensemble": EnsembleBlock, "output": OutputBlock}


@dataclass(frozen=True)
class ExperimentConfig:
    grid: GridBlock = field(default_factory=GridBlock)
    solver: SolverBlock = field(default_factory=SolverBlock)
    noise: NoiseBlock = field(default_factory=NoiseBlock)
    initial: InitialBlock = field(default_factory=InitialBlock)
    ensemble: EnsembleBlock = field(default_factory=EnsembleBlock)
    output: OutputBlock = field(default_factory=OutputBlock)

    @classmethod
    def from_dict(cls, data: Optional[dict]) -> "ExperimentConfig":
        data = {} if data is None else data
        if not isinstance(data, dict):
            raise ConfigurationError("configuration must be a mapping of blocks")
        unknown = sorted(set(data) - set(BLOCKS))
        if unknown:
            raise ConfigurationError(f"unknown configuration block(s): {', '.join(map(str, unknown))}")
        cfg = cls(**{name: blk.parse(data.get(name)) for name, blk in BLOCKS.items()})
        cfg.initial_spec()
        return cfg

    def to_dict(self) -> dict:
        out = {}
        for name in BLOCKS:
            d = asdict(getattr(self, name))
            out[name] = {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}
        return out

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=True, default_flow_style=False)

    def with_overrides(self, n_paths: Optional[int] = None, seed: Optional[int] = None,
                       threads: Optional[int] = None, directory: Optional[str] = None) -> "ExperimentConfig":
        ens = self.ensemble.__dict__ | {k: v for k, v in (("n_paths", n_paths), ("master_seed", seed),
                                                         ("threads", threads)) if v is not None}
        out = self.output.__dict__ | ({"directory": directory} if directory is not None else {})
        data = self.to_dict()
        data["ensemble"] = {k: list(v) if isinstance(v, tuple) else v for k, v in ens.items()}
        data["output"] = {k: list(v) if isinstance(v, tuple) else v for k, v in out.items()}
        return ExperimentConfig.from_dict(data)

    # builders
    def grid_obj(self) -> Grid:
        return self.grid.build()

    def solver_config(self) -> SolverConfig:
        return self.solver.build()

    def noise_model(self) -> NoiseModel:
        return self.noise.build(self.grid_obj())

    def initial_spec(self) -> InitialDataSpec:
        return self.initial.build(self.solver.delta0)

    def output_dir(self) -> str:
        return self.output.directory or os.environ.get(OUTPUT_ENV) or DEFAULT_OUTPUT


def parse_config_text(text: str) -> ExperimentConfig:
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigurationError(f"malformed configuration: {exc}") from exc
    return ExperimentConfig.from_dict(data)


def load_config(path: Optional[str]) -> ExperimentConfig:
    """Read a YAML configuration; ``None`` gives the defaults."""
    if path is None:
        return ExperimentConfig.from_dict({})
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigurationError(f"cannot read configuration {path!r}: {exc}") from exc
    return parse_config_text(text)


def config_value(obj: Any):
    """Plain-data view used when hashing configurations."""
    if isinstance(obj, ExperimentConfig):
        return obj.to_dict()
    return obj
