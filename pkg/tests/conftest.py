import numpy as np
import pytest

from pdo.grid import Field, Grid, NormStats
from pdo.util import derive_rng


@pytest.fixture
def small_grid() -> Grid:
    return Grid(n_space=16, n_time=16, x_min=0.0, x_max=1.0, t_min=0.0, t_max=1.0)


def make_field(grid: Grid, channels=("h", "u"), seed: int = 0) -> Field:
    rng = derive_rng(seed, 0)
    data = rng.standard_normal((len(channels), grid.n_time, grid.n_space))
    return Field(grid, channels, data)


def two_cluster_fields(n: int = 64, seed: int = 0, side: int = 8) -> tuple[list[Field], NormStats]:
    """Tiny bimodal dataset: near-constant fields around +1 or -1."""
    grid = Grid(side, side, 0.0, 1.0, 0.0, 1.0)
    rng = derive_rng(seed, 0)
    fields = []
    for _ in range(n):
        center = 1.0 if rng.random() < 0.5 else -1.0
        vals = center + 0.05 * rng.standard_normal((2, side, side))
        fields.append(Field(grid, ("p", "q"), vals))
    stats = NormStats.from_fields(fields)
    return fields, stats
