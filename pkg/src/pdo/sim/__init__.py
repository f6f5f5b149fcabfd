"""Ground-truth simulators for the four dynamical systems."""

from .darcy import DarcyConfig, darcy_sample_coefficient, darcy_solve, darcy_solve_arrays
from .reactor import ReactorConfig, reactor_solve
from .swe import (
    SweConfig,
    SweInitParams,
    SweOrigIcParams,
    swe_init_initial,
    swe_orig_initial,
    swe_solve,
)

__all__ = [
    "DarcyConfig",
    "ReactorConfig",
    "SweConfig",
    "SweInitParams",
    "SweOrigIcParams",
    "darcy_sample_coefficient",
    "darcy_solve",
    "darcy_solve_arrays",
    "reactor_solve",
    "swe_init_initial",
    "swe_orig_initial",
    "swe_solve",
]
