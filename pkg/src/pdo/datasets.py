"""Bit-exact on-disk container: a JSON manifest plus raw float32 instances.

Layout of a dataset directory:

    manifest.json      UTF-8, schema versioned (see DatasetManifest)
    inst_00000.f32     one file per instance: little-endian float32,
    inst_00001.f32     channel-major [C, T, X], no header
    ...

Writes go through a ``.tmp`` suffix and an atomic rename, so a crash never
leaves a corrupt final file. Reads are safe concurrently; writers need
exclusive directory access by convention (single writer).
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, DataError
from .grid import Field, Grid, NormStats

FORMAT_VERSION = 1
SPLIT_NAMES = ("train", "val", "test")


@dataclass(frozen=True)
class DatasetManifest:
    system: str
    grid: Grid
    channels: tuple[str, ...]
    n_instances: int
    splits: dict[str, list[int]]
    master_seed: int
    stats: NormStats | None = None
    system_params: dict = field(default_factory=dict)
    format_version: int = FORMAT_VERSION

    def __post_init__(self) -> None:
        object.__setattr__(self, "channels", tuple(self.channels))
        splits = {name: [int(i) for i in self.splits.get(name, [])] for name in SPLIT_NAMES}
        object.__setattr__(self, "splits", splits)
        seen: set[int] = set()
        for name, idx in splits.items():
            overlap = seen & set(idx)
            if overlap:
                raise ConfigurationError(f"split {name!r} overlaps another split: {sorted(overlap)}")
            seen |= set(idx)
        if seen != set(range(self.n_instances)):
            raise ConfigurationError(
                f"splits must cover all {self.n_instances} instances exactly; got {len(seen)} indices"
            )
        if self.stats is not None and self.stats.channels != self.channels:
            raise ConfigurationError("stats channels do not match manifest channels")

    def instance_shape(self) -> tuple[int, int, int]:
        return (len(self.channels), self.grid.n_time, self.grid.n_space)

    def to_json(self) -> dict:
        doc = {
            "format_version": self.format_version,
            "system": self.system,
            "grid": {
                "n_space": self.grid.n_space,
                "n_time": self.grid.n_time,
                "x_min": self.grid.x_min,
                "x_max": self.grid.x_max,
                "t_min": self.grid.t_min,
                "t_max": self.grid.t_max,
            },
            "channels": list(self.channels),
            "n_instances": self.n_instances,
            "splits": self.splits,
            "master_seed": self.master_seed,
            "system_params": self.system_params,
        }
        if self.stats is not None:
            doc["norm_stats"] = {
                "mean": [float(v) for v in self.stats.mean],
                "std": [float(v) for v in self.stats.std],
            }
        return doc

    @classmethod
    def from_json(cls, doc: dict) -> "DatasetManifest":
        required = ("format_version", "system", "grid", "channels", "n_instances", "splits", "master_seed")
        missing = [key for key in required if key not in doc]
        if missing:
            raise DataError(f"manifest is missing required keys: {missing}")
        version = doc["format_version"]
        if version != FORMAT_VERSION:
            raise DataError(f"unsupported manifest format_version {version}, expected {FORMAT_VERSION}")
        grid = Grid(**{k: doc["grid"][k] for k in ("n_space", "n_time", "x_min", "x_max", "t_min", "t_max")})
        channels = tuple(doc["channels"])
        stats = None
        if doc.get("norm_stats") is not None:
            stats = NormStats(channels, doc["norm_stats"]["mean"], doc["norm_stats"]["std"])
        return cls(
            system=doc["system"],
            grid=grid,
            channels=channels,
            n_instances=int(doc["n_instances"]),
            splits=doc["splits"],
            master_seed=int(doc["master_seed"]),
            stats=stats,
            system_params=doc.get("system_params", {}),
        )


def instance_filename(index: int) -> str:
    return f"inst_{index:05d}.f32"


def write_array_atomic(path: str, data: np.ndarray) -> None:
    tmp = path + ".tmp"
    with open(tmp, "wb") as fh:
        fh.write(np.ascontiguousarray(data, dtype="<f4").tobytes())
    os.replace(tmp, path)


def write_json_atomic(path: str, doc: dict) -> None:
    tmp = path + ".tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")
    os.replace(tmp, path)


def write_dataset(instances: list[Field], manifest: DatasetManifest, directory: str) -> None:
    if len(instances) != manifest.n_instances:
        raise ConfigurationError(f"{len(instances)} instances != manifest count {manifest.n_instances}")
    for inst in instances:
        if inst.channels != manifest.channels or inst.grid != manifest.grid:
            raise ConfigurationError("all instances must share the manifest grid and channels")
    os.makedirs(directory, exist_ok=True)
    for i, inst in enumerate(instances):
        write_array_atomic(os.path.join(directory, instance_filename(i)), inst.data)
    write_json_atomic(os.path.join(directory, "manifest.json"), manifest.to_json())


def read_manifest(directory: str) -> DatasetManifest:
    path = os.path.join(directory, "manifest.json")
    if not os.path.exists(path):
        raise DataError(f"no manifest.json in {directory}")
    with open(path, encoding="utf-8") as fh:
        return DatasetManifest.from_json(json.load(fh))


def read_instance(directory: str, manifest: DatasetManifest, index: int) -> Field:
    name = instance_filename(index)
    path = os.path.join(directory, name)
    if not os.path.exists(path):
        raise DataError(f"missing instance file {name}")
    shape = manifest.instance_shape()
    expected = int(np.prod(shape)) * 4
    actual = os.path.getsize(path)
    if actual != expected:
        raise DataError(f"{name}: {actual} bytes on disk, expected {expected} for shape {shape}")
    with open(path, "rb") as fh:
        data = np.frombuffer(fh.read(), dtype="<f4").reshape(shape)
    return Field(manifest.grid, manifest.channels, data)


def read_dataset(directory: str) -> tuple[list[Field], DatasetManifest]:
    """Read back every instance; normalization is never applied here."""
    manifest = read_manifest(directory)
    fields = [read_instance(directory, manifest, i) for i in range(manifest.n_instances)]
    return fields, manifest


def make_splits(n_instances: int, fractions: tuple[float, float, float], rng: np.random.Generator) -> dict[str, list[int]]:
    """Disjoint shuffled train/val/test index lists covering all instances."""
    if len(fractions) != 3 or abs(sum(fractions) - 1.0) > 1e-9:
        raise ConfigurationError(f"split fractions must sum to 1, got {fractions}")
    order = rng.permutation(n_instances)
    n_train = int(round(fractions[0] * n_instances))
    n_val = int(round(fractions[1] * n_instances))
    n_train = min(n_train, n_instances)
    n_val = min(n_val, n_instances - n_train)
    return {
        "train": sorted(int(i) for i in order[:n_train]),
        "val": sorted(int(i) for i in order[n_train : n_train + n_val]),
        "test": sorted(int(i) for i in order[n_train + n_val :]),
    }
