"""Per-system dataset generation with deterministic derived seeds.

Instance ``i`` of a dataset is a pure function of (system, grid, params,
master_seed, i); generation therefore parallelizes across instances and any
worker count produces identical datasets. Channel orders put the forward
task's conditioning channels first (see masks module).
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor

import numpy as np

from ..datasets import DatasetManifest, make_splits
from ..errors import ConfigurationError
from ..grid import Field, Grid, NormStats
from ..util import derive_rng, derive_seed
from .darcy import DarcyConfig, darcy_sample_coefficient, darcy_solve
from .reactor import ReactorConfig, reactor_solve
from .swe import (
    Boundary,
    IcFamily,
    SweConfig,
    SweInitParams,
    SweOrigIcParams,
    swe_init_initial,
    swe_orig_initial,
    swe_solve,
)

SYSTEMS = ("swe_orig", "swe_init", "darcy", "reactor")

DEFAULT_GRIDS = {
    "swe_orig": dict(n_space=64, n_time=64, x_min=-0.5, x_max=0.5, t_min=0.0, t_max=0.128),
    "swe_init": dict(n_space=64, n_time=64, x_min=-2.5, x_max=2.5, t_min=0.0, t_max=1.28),
    "darcy": dict(n_space=64, n_time=64, x_min=0.0, x_max=1.0, t_min=0.0, t_max=1.0),
    "reactor": dict(n_space=64, n_time=64, x_min=0.0, x_max=1.0, t_min=0.0, t_max=1.0),
}

DEFAULT_SYSTEM_PARAMS = {
    "swe_orig": {"g": 1.0, "boundary": "periodic", "cfl": 0.45},
    "swe_init": {"g": 1.0, "boundary": "outflow", "cfl": 0.45},
    "darcy": {"a_low": 3.0, "a_high": 12.0, "grf_length_scale": 0.1, "forcing": 1.0},
    "reactor": {
        "U": 1.0,
        "gamma": 0.25,
        "k_reaction": 2.0,
        "activation_temp": 1.0,
        "k_poison": 1.0,
        "k_deactivation": 2.0,
        "beta_slope": 2.0,
        "inlet_T": 1.0,
        "cfl": 0.45,
    },
}

CHANNELS = {
    "swe_orig": ("h", "u"),
    "swe_init": ("h", "u"),
    "darcy": ("a", "u"),
    "reactor": ("x_p", "T", "x_a", "theta"),
}

# Per-instance randomization ranges for the reactor boundary/initial values.
REACTOR_RANGES = {"inlet_xa": (0.4, 1.0), "inlet_xp": (0.0, 0.6), "theta0": (0.6, 1.0)}


def default_grid(system: str) -> Grid:
    if system not in SYSTEMS:
        raise ConfigurationError(f"unknown system {system!r}; expected one of {SYSTEMS}")
    return Grid(**DEFAULT_GRIDS[system])


def simulate_instance(system: str, grid: Grid, params: dict, master_seed: int, index: int) -> Field:
    """One ground-truth trajectory; instance stream 0 of the master seed."""
    rng = derive_rng(master_seed, 0, index)
    if system == "swe_orig":
        config = SweConfig(
            g=params["g"], cfl=params["cfl"], boundary=Boundary(params["boundary"]),
            ic_family=IcFamily.PERIODIC_FOURIER,
        )
        return swe_solve(config, swe_orig_initial(SweOrigIcParams.sample(rng), grid), grid)
    if system == "swe_init":
        config = SweConfig(
            g=params["g"], cfl=params["cfl"], boundary=Boundary(params["boundary"]),
            ic_family=IcFamily.DAM_BREAK,
        )
        return swe_solve(config, swe_init_initial(SweInitParams.sample(rng), grid), grid)
    if system == "darcy":
        config = DarcyConfig(
            a_low=params["a_low"], a_high=params["a_high"],
            grf_length_scale=params["grf_length_scale"], forcing=params["forcing"],
        )
        a = darcy_sample_coefficient(derive_seed(master_seed, 0, index), config, grid)
        u = darcy_solve(a, config, grid)
        data = np.concatenate([a.data, u.data])
        return Field(grid, CHANNELS["darcy"], data)
    if system == "reactor":
        # Inlet/initial values are randomized per instance unless the system
        # params pin them explicitly.
        draws = {
            name: float(rng.uniform(lo, hi))
            for name, (lo, hi) in REACTOR_RANGES.items()
            if name not in params
        }
        config = ReactorConfig(**params, **draws)
        solved = reactor_solve(config, grid)
        data = np.stack([solved.channel(name) for name in CHANNELS["reactor"]])
        return Field(grid, CHANNELS["reactor"], data)
    raise ConfigurationError(f"unknown system {system!r}; expected one of {SYSTEMS}")


def _simulate_args(args: tuple) -> np.ndarray:
    system, grid, params, master_seed, index = args
    return simulate_instance(system, grid, params, master_seed, index).data


def generate_dataset(
    system: str,
    n_instances: int,
    master_seed: int,
    grid: Grid | None = None,
    system_params: dict | None = None,
    split_fractions: tuple[float, float, float] = (0.8, 0.1, 0.1),
    workers: int = 1,
) -> tuple[list[Field], DatasetManifest]:
    """Simulate a dataset; stats are computed on the training split only."""
    if system not in SYSTEMS:
        raise ConfigurationError(f"unknown system {system!r}; expected one of {SYSTEMS}")
    if n_instances < 3:
        raise ConfigurationError("need at least 3 instances for train/val/test splits")
    grid = grid or default_grid(system)
    params = dict(DEFAULT_SYSTEM_PARAMS[system])
    params.update(system_params or {})
    channels = CHANNELS[system]

    jobs = [(system, grid, params, master_seed, i) for i in range(n_instances)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            arrays = list(pool.map(_simulate_args, jobs, chunksize=4))
    else:
        arrays = [_simulate_args(job) for job in jobs]
    fields = [Field(grid, channels, data) for data in arrays]

    splits = make_splits(n_instances, split_fractions, derive_rng(master_seed, 1))
    stats = NormStats.from_fields([fields[i] for i in splits["train"]])
    manifest = DatasetManifest(
        system=system,
        grid=grid,
        channels=channels,
        n_instances=n_instances,
        splits=splits,
        master_seed=master_seed,
        stats=stats,
        system_params=params,
    )
    return fields, manifest
