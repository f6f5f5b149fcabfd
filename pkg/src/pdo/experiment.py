"""Experiment configuration and the generate/train/evaluate pipelines.

A single JSON document configures everything; unset keys take the defaults
below (per-system grid and physics defaults come from the simulators). The
fully resolved config is materialized into the output directory so every
artifact is self-describing, and each command is a pure function of
(config, seed): re-runs reproduce reports byte for byte.
"""

from __future__ import annotations

import copy
import json
import os

import numpy as np

from .datasets import DatasetManifest, read_dataset, write_dataset, write_json_atomic
from .diffusion import DdpmSchedule, EdmConfig, SamplerConfig
from .errors import ConfigurationError
from .grid import Field, Grid, normalize
from .masks import TaskId, mask_for_task
from .metrics import (
    default_corner_points,
    evaluate_samples,
    mae_over_generated,
    residual_metric_fn,
    select_sample,
)
from .sim.generate import DEFAULT_GRIDS, generate_dataset
from .training import (
    Checkpoint,
    TrainConfig,
    draw_samples,
    load_checkpoint,
    save_checkpoint,
    train,
)
from .unet import NetConfig
from .util import derive_rng
from .kalman import kf_reconstruct

REPORT_SCHEMA_VERSION = 1

DEFAULT_CONFIG = {
    "system": "swe_orig",
    "seed": 0,
    "out_dir": "runs/experiment",
    "grid": None,
    "system_params": {},
    "dataset": {"n_instances": 200, "split_fractions": [0.8, 0.1, 0.1], "dir": None},
    "tasks": {
        "weights": {t.value: 1.0 for t in TaskId},
        "prefix_range": [0.25, 0.75],
        "eval_prefix": 0.5,
    },
    "model": {"base_width": 32, "depth": 3, "embedding_dim": 128},
    "train": {
        "mode": "mixed",
        "objective": "edm",
        "iterations": 2000,
        "batch_size": 8,
        "lr": 2e-4,
        "adam_beta1": 0.9,
        "adam_beta2": 0.999,
        "ema_decay": 0.999,
        "grad_clip": 1.0,
        "include_mask_channels": True,
        "telemetry_every": 10,
    },
    "diffusion": {
        "edm": {
            "sigma_min": 0.002,
            "sigma_max": 80.0,
            "rho": 7.0,
            "sigma_data": 0.5,
            "p_mean": -1.2,
            "p_std": 1.2,
        },
        "ddpm": {"n_steps": 1000, "beta_start": 1e-4, "beta_end": 0.02},
    },
    "sampler": {"mode": "heun", "n_steps": 32, "jump_length": 10, "n_resample": 5},
    "evaluate": {
        "n_samples": 100,
        "tasks": ["task1"],
        "max_cases": 16,
        "kalman": False,
        "flag_case": 0,
        "use_ema": True,
        "checkpoint": None,
        "dataset": None,
    },
}


def _deep_merge(base: dict, override: dict) -> dict:
    merged = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = _deep_merge(merged[key], value)
        else:
            merged[key] = copy.deepcopy(value)
    return merged


class ExperimentConfig:
    """Resolved experiment configuration backed by one JSON document."""

    def __init__(self, doc: dict):
        self.doc = _deep_merge(DEFAULT_CONFIG, doc or {})
        system = self.doc["system"]
        if system not in DEFAULT_GRIDS:
            raise ConfigurationError(f"unknown system {system!r}")
        if self.doc["grid"] is None:
            self.doc["grid"] = dict(DEFAULT_GRIDS[system])
        if self.doc["seed"] is None:
            raise ConfigurationError("a master seed is required (no implicit entropy)")

    @classmethod
    def from_file(cls, path: str) -> "ExperimentConfig":
        if not os.path.exists(path):
            raise ConfigurationError(f"config file {path} does not exist")
        with open(path, encoding="utf-8") as fh:
            return cls(json.load(fh))

    # -- accessors ---------------------------------------------------------

    @property
    def system(self) -> str:
        return self.doc["system"]

    @property
    def seed(self) -> int:
        return int(self.doc["seed"])

    @property
    def out_dir(self) -> str:
        return self.doc["out_dir"]

    @property
    def grid(self) -> Grid:
        return Grid(**self.doc["grid"])

    @property
    def dataset_dir(self) -> str:
        return self.doc["dataset"]["dir"] or os.path.join(self.out_dir, "dataset")

    @property
    def checkpoint_dir(self) -> str:
        return self.doc["evaluate"]["checkpoint"] or os.path.join(self.out_dir, "ckpt")

    @property
    def task_weights(self) -> dict[TaskId, float]:
        return {TaskId.from_name(k): float(v) for k, v in self.doc["tasks"]["weights"].items()}

    @property
    def edm(self) -> EdmConfig:
        return EdmConfig(**self.doc["diffusion"]["edm"])

    @property
    def schedule(self) -> DdpmSchedule:
        d = self.doc["diffusion"]["ddpm"]
        return DdpmSchedule.linear(d["n_steps"], d["beta_start"], d["beta_end"])

    @property
    def sampler(self) -> SamplerConfig:
        s = self.doc["sampler"]
        return SamplerConfig(
            mode=s["mode"], n_steps=int(s["n_steps"]),
            jump_length=int(s["jump_length"]), n_resample=int(s["n_resample"]),
        )

    @property
    def train_config(self) -> TrainConfig:
        t = self.doc["train"]
        return TrainConfig(
            iterations=int(t["iterations"]),
            batch_size=int(t["batch_size"]),
            lr=float(t["lr"]),
            adam_beta1=float(t["adam_beta1"]),
            adam_beta2=float(t["adam_beta2"]),
            ema_decay=float(t["ema_decay"]),
            grad_clip=float(t["grad_clip"]),
            prefix_range=tuple(self.doc["tasks"]["prefix_range"]),
            include_mask_channels=bool(t["include_mask_channels"]),
            telemetry_every=int(t["telemetry_every"]),
        )

    def materialize(self) -> None:
        os.makedirs(self.out_dir, exist_ok=True)
        write_json_atomic(os.path.join(self.out_dir, "config.resolved.json"), self.doc)


# ---------------------------------------------------------------------------
# pipelines


def run_generate(config: ExperimentConfig, workers: int = 1) -> str:
    config.materialize()
    fields, manifest = generate_dataset(
        system=config.system,
        n_instances=int(config.doc["dataset"]["n_instances"]),
        master_seed=config.seed,
        grid=config.grid,
        system_params=config.doc["system_params"],
        split_fractions=tuple(config.doc["dataset"]["split_fractions"]),
        workers=workers,
    )
    write_dataset(fields, manifest, config.dataset_dir)
    return config.dataset_dir


def run_train(config: ExperimentConfig) -> str:
    config.materialize()
    fields, manifest = read_dataset(config.dataset_dir)
    train_fields = [normalize(fields[i], manifest.stats) for i in manifest.splits["train"]]
    mode = config.doc["train"]["mode"]
    objective = config.doc["train"]["objective"]
    model = config.doc["model"]
    n_ch = len(manifest.channels)
    from .training import input_channel_count

    net_config = NetConfig(
        in_channels=input_channel_count(n_ch, mode, config.train_config.include_mask_channels),
        out_channels=n_ch,
        base_width=int(model["base_width"]),
        depth=int(model["depth"]),
        embedding_dim=int(model["embedding_dim"]),
    )
    result = train(
        fields=train_fields,
        stats=manifest.stats,
        mode=mode,
        objective=objective,
        train_config=config.train_config,
        master_seed=config.seed,
        net_config=net_config,
        edm_config=config.edm,
        schedule=config.schedule if objective == "ddpm" else None,
        task_weights=config.task_weights,
        telemetry_path=os.path.join(config.out_dir, "telemetry.jsonl"),
    )
    save_checkpoint(result.checkpoint, config.checkpoint_dir)
    return config.checkpoint_dir


def evaluate_case(
    ckpt: Checkpoint,
    target_field: Field,
    manifest: DatasetManifest,
    task: TaskId,
    config: ExperimentConfig,
    case_id: int,
    rng: np.random.Generator,
) -> dict:
    """Full per-case record: sampling, metrics, selections, optional filter."""
    stats = manifest.stats
    normalized = normalize(target_field, stats)
    shape = normalized.data.shape
    mask = mask_for_task(task, shape, float(config.doc["tasks"]["eval_prefix"]))
    metric = residual_metric_fn(manifest.system, manifest.system_params)

    def residual_of_sample(sample: np.ndarray) -> float:
        data = sample * stats.std[:, None, None] + stats.mean[:, None, None]
        return metric(Field(manifest.grid, manifest.channels, data))

    n_samples = int(config.doc["evaluate"]["n_samples"])
    samples = draw_samples(
        ckpt, normalized.data, mask, config.sampler, rng, n_samples,
        use_ema=bool(config.doc["evaluate"]["use_ema"]),
    )
    target = normalized.data.astype(np.float64)
    if n_samples >= 2:
        report = evaluate_samples(samples, target, mask, residual_of_sample, case_id)
        for strategy in ("closest", "by_pde", "by_points"):
            index = select_sample(
                report, strategy, samples=samples, target=target, mask=mask,
            )
            report.selected[strategy] = index
            report.selected_mae[strategy] = float(report.mae[index])
        case = report.to_json()
    else:
        single = mae_over_generated(samples[0], target, mask)
        case = {
            "case_id": case_id,
            "n_samples": 1,
            "mae": [single],
            "residual": [residual_of_sample(samples[0])],
            "mae_mean": single,
            "mean_prediction_mae": single,
            "spearman": 0.0,
            "selected": {},
            "selected_mae": {},
        }
        case["residual_mean"] = case["residual"][0]
    case["corner_points"] = [list(p) for p in default_corner_points(mask)]

    if bool(config.doc["evaluate"]["kalman"]) and manifest.system in ("swe_orig", "swe_init") and task is TaskId.TASK1:
        kf_field, diag = kf_reconstruct(
            target_field.channel("h"),
            manifest.grid,
            g=float(manifest.system_params.get("g", 1.0)),
        )
        kf_normalized = normalize(kf_field, stats)
        case["kalman_mae"] = mae_over_generated(kf_normalized.data, target, mask)
        case["kalman_residual"] = metric(kf_field)
        case["kalman_innovation_lag1"] = diag.innovation_lag1_autocorr
    return case


def run_evaluate(config: ExperimentConfig) -> str:
    """Evaluate a checkpoint on the test split for every requested task."""
    config.materialize()
    fields, manifest = read_dataset(config.dataset_dir)
    ckpt = load_checkpoint(config.checkpoint_dir)
    test_indices = manifest.splits["test"][: int(config.doc["evaluate"]["max_cases"])]
    if not test_indices:
        raise ConfigurationError("dataset has no test split")

    tasks = [TaskId.from_name(name) for name in config.doc["evaluate"]["tasks"]]
    warnings = []
    sections = {}
    for task_pos, task in enumerate(tasks):
        if ckpt.mode.startswith("conditional:") and ckpt.mode != f"conditional:{task.value}":
            warnings.append(
                f"checkpoint trained for {ckpt.mode!r} evaluated on {task.value}: "
                "expect degraded cross-task performance"
            )
        cases = []
        for case_pos, index in enumerate(test_indices):
            rng = derive_rng(config.seed, 3, task_pos, case_pos)
            cases.append(
                evaluate_case(ckpt, fields[index], manifest, task, config, index, rng)
            )
        mae_means = np.array([c["mae_mean"] for c in cases])
        mean_pred = np.array([c["mean_prediction_mae"] for c in cases])
        section = {
            "task": task.value,
            "cases": cases,
            "aggregate": {
                "mae_mean": float(mae_means.mean()),
                "mean_prediction_mae": float(mean_pred.mean()),
                "median_spearman": float(np.median([c["spearman"] for c in cases])),
            },
        }
        for strategy in ("closest", "by_pde", "by_points"):
            values = [c["selected_mae"].get(strategy) for c in cases]
            if all(v is not None for v in values):
                section["aggregate"][f"mae_{strategy}"] = float(np.mean(values))
        sections[task.value] = section

    report = {
        "schema_version": REPORT_SCHEMA_VERSION,
        "system": manifest.system,
        "checkpoint_mode": ckpt.mode,
        "checkpoint_objective": ckpt.objective,
        "seed": config.seed,
        "n_samples": int(config.doc["evaluate"]["n_samples"]),
        "warnings": warnings,
        "tasks": sections,
    }
    write_json_atomic(os.path.join(config.out_dir, "report.json"), report)
    write_report_csvs(report, config.out_dir, flag_case=int(config.doc["evaluate"]["flag_case"]))
    return os.path.join(config.out_dir, "report.json")


# ---------------------------------------------------------------------------
# figure-ready CSV emission (stable column headers, documented in README)


def _write_csv(path: str, header: list[str], rows: list[list]) -> None:
    tmp = path + ".tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(repr(v) if isinstance(v, float) else str(v) for v in row) + "\n")
    os.replace(tmp, path)


def write_report_csvs(report: dict, out_dir: str, flag_case: int = 0) -> list[str]:
    os.makedirs(out_dir, exist_ok=True)
    written = []

    per_case_rows = []
    scatter_rows = []
    corr_rows = []
    residual_rows = []
    for task_name, section in sorted(report["tasks"].items()):
        for case in section["cases"]:
            per_case_rows.append(
                [
                    task_name,
                    case["case_id"],
                    case["n_samples"],
                    float(case["mae_mean"]),
                    float(case["mean_prediction_mae"]),
                    float(case["selected_mae"].get("closest", float("nan"))),
                    float(case["selected_mae"].get("by_pde", float("nan"))),
                    float(case["selected_mae"].get("by_points", float("nan"))),
                    float(case["residual_mean"]),
                    float(case["spearman"]),
                    float(case.get("kalman_mae", float("nan"))),
                ]
            )
            corr_rows.append([task_name, case["case_id"], float(case["spearman"])])
            residual_rows.append([task_name, case["case_id"], float(case["residual_mean"])])
            if case["case_id"] == flag_case:
                for i, (m, r) in enumerate(zip(case["mae"], case["residual"])):
                    scatter_rows.append([task_name, case["case_id"], i, float(m), float(r)])

    paths = {
        "per_case_metrics.csv": (
            [
                "task", "case_id", "n_samples", "mae_mean", "mean_prediction_mae",
                "mae_closest", "mae_by_pde", "mae_by_points", "residual_mean",
                "spearman", "kalman_mae",
            ],
            per_case_rows,
        ),
        "sample_scatter.csv": (["task", "case_id", "sample_index", "mae", "residual"], scatter_rows),
        "correlation_histogram.csv": (["task", "case_id", "spearman"], corr_rows),
        "residual_distribution.csv": (["task", "case_id", "residual_mean"], residual_rows),
    }
    for name, (header, rows) in paths.items():
        path = os.path.join(out_dir, name)
        _write_csv(path, header, rows)
        written.append(path)
    return written


def run_sample(config: ExperimentConfig) -> str:
    """Draw samples for one flagged test case and dump per-sample profiles."""
    config.materialize()
    fields, manifest = read_dataset(config.dataset_dir)
    ckpt = load_checkpoint(config.checkpoint_dir)
    task = TaskId.from_name(config.doc["evaluate"]["tasks"][0])
    test_indices = manifest.splits["test"]
    if not test_indices:
        raise ConfigurationError("dataset has no test split")
    flag = int(config.doc["evaluate"]["flag_case"])
    index = flag if flag in test_indices else test_indices[0]

    target_field = fields[index]
    normalized = normalize(target_field, manifest.stats)
    mask = mask_for_task(task, normalized.data.shape, float(config.doc["tasks"]["eval_prefix"]))
    rng = derive_rng(config.seed, 4, index)
    samples = draw_samples(
        ckpt, normalized.data, mask, config.sampler, rng,
        int(config.doc["evaluate"]["n_samples"]),
        use_ema=bool(config.doc["evaluate"]["use_ema"]),
    )

    os.makedirs(config.out_dir, exist_ok=True)
    from .datasets import write_array_atomic

    stack_path = os.path.join(config.out_dir, f"samples_case{index:05d}.f32")
    write_array_atomic(stack_path, samples.astype(np.float32))

    # Per-sample trajectories of the first generated channel's first row.
    (c, t, x0), (_, _, x1) = default_corner_points(mask)
    rows = []
    for s in range(samples.shape[0]):
        for x in range(samples.shape[3]):
            rows.append([index, s, x, float(samples[s, c, t, x])])
    for x in range(normalized.data.shape[2]):
        rows.append([index, -1, x, float(normalized.data[c, t, x])])
    _write_csv(
        os.path.join(config.out_dir, "sample_profiles.csv"),
        ["case_id", "sample_index", "x_index", "value"],
        rows,
    )
    return stack_path


def run_report(config: ExperimentConfig) -> list[str]:
    """Regenerate the CSV emissions from a stored report.json."""
    path = os.path.join(config.out_dir, "report.json")
    if not os.path.exists(path):
        raise ConfigurationError(f"no report.json in {config.out_dir}; run evaluate first")
    with open(path, encoding="utf-8") as fh:
        report = json.load(fh)
    return write_report_csvs(report, config.out_dir, flag_case=int(config.doc["evaluate"]["flag_case"]))
