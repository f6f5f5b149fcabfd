"""Grid and field containers shared by simulators, models, and metrics.

Conventions:

* Field data is float32 with axes [channel, time, space]; solvers accumulate
  in float64 internally and cast on output.
* Space is cell-based: ``n_space`` cells of width ``dx``. Periodic systems
  sample at the left cell edges (``x_nodes``), bounded finite-volume systems
  at cell centers (``x_centers``).
* Time is snapshot-based: ``n_time`` snapshots ``dt`` apart, both endpoints
  included. Steady 2D systems reuse the time axis as the second spatial axis
  with identical bookkeeping.

All types are immutable after construction; operations are pure functions.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, SimulationError


@dataclass(frozen=True)
class Grid:
    n_space: int
    n_time: int
    x_min: float
    x_max: float
    t_min: float
    t_max: float

    def __post_init__(self) -> None:
        if self.n_space < 1:
            raise ConfigurationError(f"n_space must be positive, got {self.n_space}")
        if self.n_time < 2:
            raise ConfigurationError(f"n_time must be at least 2, got {self.n_time}")
        if not self.x_max > self.x_min:
            raise ConfigurationError(f"empty spatial extent [{self.x_min}, {self.x_max}]")
        if not self.t_max > self.t_min:
            raise ConfigurationError(f"empty time extent [{self.t_min}, {self.t_max}]")
        # Step formulas must hold exactly for every constructed grid.
        assert self.dx == (self.x_max - self.x_min) / self.n_space
        assert self.dt == (self.t_max - self.t_min) / (self.n_time - 1)

    @property
    def dx(self) -> float:
        return (self.x_max - self.x_min) / self.n_space

    @property
    def dt(self) -> float:
        return (self.t_max - self.t_min) / (self.n_time - 1)

    def x_nodes(self) -> np.ndarray:
        """Left cell edges; the natural sampling for periodic domains."""
        return self.x_min + np.arange(self.n_space) * self.dx

    def x_centers(self) -> np.ndarray:
        """Cell centers; the natural sampling for bounded domains."""
        return self.x_min + (np.arange(self.n_space) + 0.5) * self.dx

    def times(self) -> np.ndarray:
        return self.t_min + np.arange(self.n_time) * self.dt

    @property
    def shape(self) -> tuple[int, int]:
        return (self.n_time, self.n_space)


@dataclass(frozen=True)
class Field:
    """A channels x time x space block of float32 samples on a grid."""

    grid: Grid
    channels: tuple[str, ...]
    data: np.ndarray

    def __post_init__(self) -> None:
        channels = tuple(self.channels)
        object.__setattr__(self, "channels", channels)
        if len(channels) < 1:
            raise ConfigurationError("a field needs at least one channel")
        if len(set(channels)) != len(channels):
            raise ConfigurationError(f"duplicate channel names: {channels}")
        data = np.ascontiguousarray(self.data, dtype=np.float32)
        expected = (len(channels), self.grid.n_time, self.grid.n_space)
        if data.shape != expected:
            raise ConfigurationError(f"field data shape {data.shape} != {expected}")
        object.__setattr__(self, "data", data)

    def channel(self, name: str) -> np.ndarray:
        try:
            return self.data[self.channels.index(name)]
        except ValueError:
            raise ConfigurationError(f"no channel {name!r} in {self.channels}") from None

    def with_data(self, data: np.ndarray) -> "Field":
        return Field(self.grid, self.channels, data)

    def require_finite(self, context: str = "field") -> "Field":
        if not np.isfinite(self.data).all():
            bad = int(np.size(self.data) - np.isfinite(self.data).sum())
            raise SimulationError(f"{context}: {bad} non-finite entries")
        return self


@dataclass(frozen=True)
class NormStats:
    """Per-channel mean and standard deviation (std strictly positive)."""

    channels: tuple[str, ...]
    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self) -> None:
        channels = tuple(self.channels)
        object.__setattr__(self, "channels", channels)
        mean = np.asarray(self.mean, dtype=np.float32).reshape(len(channels))
        std = np.asarray(self.std, dtype=np.float32).reshape(len(channels))
        if not (std > 0).all():
            raise ConfigurationError(f"non-positive std in {dict(zip(channels, std))}")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "std", std)

    @classmethod
    def from_fields(cls, fields: list[Field]) -> "NormStats":
        """Pooled per-channel statistics over a list of congruent fields."""
        if not fields:
            raise ConfigurationError("cannot compute stats from an empty list")
        channels = fields[0].channels
        for f in fields:
            if f.channels != channels:
                raise ConfigurationError(f"channel mismatch: {f.channels} vs {channels}")
        stacked = np.stack([f.data for f in fields]).astype(np.float64)
        mean = stacked.mean(axis=(0, 2, 3))
        std = stacked.std(axis=(0, 2, 3))
        if not (std > 0).all():
            raise ConfigurationError("a channel is constant across the dataset; std would be 0")
        return cls(channels, mean, std)


def _check_channels(field: Field, stats: NormStats) -> None:
    if field.channels != stats.channels:
        raise ConfigurationError(
            f"stats channels {stats.channels} do not match field channels {field.channels}"
        )


def normalize(field: Field, stats: NormStats) -> Field:
    """Per-channel (x - mean) / std.

    `denormalize` inverts it within 1e-6 of the channel scale
    (max(|mean| + std, |x|)); float32 roundoff rides on the channel
    magnitudes, not on the individual entry.
    """
    _check_channels(field, stats)
    data = (field.data - stats.mean[:, None, None]) / stats.std[:, None, None]
    return field.with_data(data)


def denormalize(field: Field, stats: NormStats) -> Field:
    _check_channels(field, stats)
    data = field.data * stats.std[:, None, None] + stats.mean[:, None, None]
    return field.with_data(data).require_finite("denormalize")
