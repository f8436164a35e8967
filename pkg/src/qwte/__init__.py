"""Numerical toolkit for self-similar profiles of the quadratic weak-turbulence equation."""

__version__ = "0.1.0"

from .exceptions import (AccuracyError, DegeneracyError, DivergenceError, DomainError, FitError, FormatError,
                         QwteError, RangeError, StiffnessError, ValidityError)
from .mesh import DensityProfile, Grid, KineticState, TailClosure, default_grid, rho_norm
from .sspe import SSPESolver, continuation_in_rho, solve_profile, strong_residual
from .evolver import EvolverConfig, ParticleEnsemble, TrajectoryRecord, bump_state, evolve, mc_run
from .selfsim import SelfSimilarSolution, reconstruct, rescale_profile, two_param_map, weak_residual_of_reconstruction
from .asymptotics import (HeadFit, TailFit, fit_head, fit_tail_exponential, fit_tail_powerlaw, mass_sweep,
                          predicted_head_amplitude, rescaled_head_functional)
from .io import load_profile, save_profile

__all__ = [
    "AccuracyError", "DegeneracyError", "DivergenceError", "DomainError", "FitError", "FormatError", "QwteError",
    "RangeError", "StiffnessError", "ValidityError", "DensityProfile", "Grid", "KineticState", "TailClosure",
    "default_grid", "rho_norm", "SSPESolver", "continuation_in_rho", "solve_profile", "strong_residual",
    "EvolverConfig", "ParticleEnsemble", "TrajectoryRecord", "bump_state", "evolve", "mc_run",
    "SelfSimilarSolution", "reconstruct", "rescale_profile", "two_param_map", "weak_residual_of_reconstruction",
    "HeadFit", "TailFit", "fit_head", "fit_tail_exponential", "fit_tail_powerlaw", "mass_sweep",
    "predicted_head_amplitude", "rescaled_head_functional", "load_profile", "save_profile",
]
