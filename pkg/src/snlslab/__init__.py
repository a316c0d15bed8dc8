"""Split-step spectral simulation of a focusing 1D Schrödinger equation with
multiplicative Stratonovich noise, plus Monte Carlo ensemble diagnostics."""
from .errors import ConfigurationError, ContractViolation, NumericalFailure
from .spectral import Grid, make_grid
from .noise import BrownianPath, NoiseModel, build_noise_model, hermite_modes
from .dynamics import SolverConfig, Trajectory, evolve
from .ensemble import InitialDataSpec, run_ensemble

__version__ = "0.1.0"

__all__ = [
    "BrownianPath", "ConfigurationError", "ContractViolation", "Grid", "InitialDataSpec",
    "NoiseModel", "NumericalFailure", "SolverConfig", "Trajectory", "build_noise_model",
    "evolve", "hermite_modes", "make_grid", "run_ensemble",
]
