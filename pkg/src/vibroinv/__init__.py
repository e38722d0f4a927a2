"""Coefficient identification for vibro-acoustography.

Two ultrasound beams at nearby frequencies interact through the nonlinearity
of the medium and radiate a low difference-frequency wave that is recorded on
a receiver set.  This package simulates that forward map on finite-difference
grids and recovers the sound-speed and nonlinearity coefficients from the
recorded data.
"""
from .errors import (BudgetExceeded, ConfigError, DataError, DomainError, GeometryError,
                     NoFeasibleAlpha, NumericalError, SingularError, VibroError)
from .forward import Params, ProblemInstance, forward, solve_state, synthesize_data
from .grid import build_grid
from .reconstruct import IterationConfig, IterationTrace, run

__version__ = "0.1.0"

__all__ = [
    "BudgetExceeded", "ConfigError", "DataError", "DomainError", "GeometryError",
    "NoFeasibleAlpha", "NumericalError", "SingularError", "VibroError",
    "Params", "ProblemInstance", "forward", "solve_state", "synthesize_data",
    "build_grid", "IterationConfig", "IterationTrace", "run",
]
