"""pdo: desk-scale diffusion models as neural operators for PDE systems.

Simulates four dynamical systems (two shallow-water setups, Darcy flow, a
fixed-bed tubular reactor), trains one diffusion denoiser under mixed
conditional masking, and evaluates generated solutions by MAE and discrete
PDE residuals.
"""

__version__ = "0.1.0"

from .errors import (
    ConfigurationError,
    DataError,
    NumericalError,
    PdoError,
    SimulationError,
)
from .grid import Field, Grid, NormStats, denormalize, normalize

__all__ = [
    "ConfigurationError",
    "DataError",
    "Field",
    "Grid",
    "NormStats",
    "NumericalError",
    "PdoError",
    "SimulationError",
    "denormalize",
    "normalize",
]
