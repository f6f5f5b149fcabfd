"""Deterministic seed derivation shared by generation, training, and sampling.

Every source of randomness in the package is a numpy Generator derived from
a master seed plus an integer key path, so any command re-run with the same
config and seed reproduces its outputs byte for byte.
"""

from __future__ import annotations

import numpy as np


def derive_rng(master_seed: int, *key: int) -> np.random.Generator:
    """Child generator for stream ``key`` of ``master_seed``.

    Uses SeedSequence spawn keys, so (seed, key) pairs map to independent
    streams and the derivation is stable across platforms.
    """
    ss = np.random.SeedSequence(entropy=int(master_seed), spawn_key=tuple(int(k) for k in key))
    return np.random.default_rng(ss)


def derive_seed(master_seed: int, *key: int) -> int:
    """63-bit integer seed for libraries that want a plain int (torch)."""
    ss = np.random.SeedSequence(entropy=int(master_seed), spawn_key=tuple(int(k) for k in key))
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> 1)
