"""Denoiser training loop, checkpoint container, and sampling adapters.

Training modes:

* ``mixed``              one task drawn per mini-batch from the task weights
* ``conditional:taskN``  a single fixed task (prefix still sampled for 3-5)
* ``unconditional``      all-zeros mask, no conditioning block (inpainting
                         pretraining)

All stochasticity comes from numpy generators derived from the master seed
(torch is seeded once for parameter init), so training is bit-reproducible
on one platform. Telemetry is recorded per iteration as JSON-ready dicts.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np
import torch

from .datasets import write_array_atomic, write_json_atomic
from .diffusion import (
    DdpmSchedule,
    EdmConfig,
    SamplerConfig,
    ddpm_loss,
    edm_denoised,
    edm_loss,
    heun_sample,
    repaint_sample,
)
from .errors import ConfigurationError, DataError, NumericalError
from .grid import Field, NormStats
from .masks import TaskId, TaskMask, mask_for_task, sample_task, unconditional_mask
from .unet import NetConfig, UNet
from .util import derive_rng, derive_seed

MODES = ("mixed", "unconditional") + tuple(f"conditional:{t.value}" for t in TaskId)
OBJECTIVES = ("edm", "ddpm")


@dataclass(frozen=True)
class TrainConfig:
    iterations: int = 2000
    batch_size: int = 8
    lr: float = 2e-4
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    ema_decay: float = 0.999
    grad_clip: float = 1.0
    prefix_range: tuple[float, float] = (0.25, 0.75)
    include_mask_channels: bool = True
    telemetry_every: int = 10

    def __post_init__(self) -> None:
        if min(self.iterations, self.batch_size, self.telemetry_every) < 1:
            raise ConfigurationError("iterations, batch_size, telemetry_every must be positive")
        if self.lr <= 0 or self.grad_clip <= 0:
            raise ConfigurationError("lr and grad_clip must be positive")
        if not 0.0 < self.ema_decay < 1.0:
            raise ConfigurationError(f"ema_decay must be in (0, 1), got {self.ema_decay}")
        lo, hi = self.prefix_range
        if not 0.0 < lo <= hi <= 1.0:
            raise ConfigurationError(f"bad prefix_range {self.prefix_range}")

    def to_json(self) -> dict:
        return {
            "iterations": self.iterations,
            "batch_size": self.batch_size,
            "lr": self.lr,
            "adam_beta1": self.adam_beta1,
            "adam_beta2": self.adam_beta2,
            "ema_decay": self.ema_decay,
            "grad_clip": self.grad_clip,
            "prefix_range": list(self.prefix_range),
            "include_mask_channels": self.include_mask_channels,
            "telemetry_every": self.telemetry_every,
        }


@dataclass
class Checkpoint:
    params: dict[str, np.ndarray]
    ema_params: dict[str, np.ndarray]
    net_config: NetConfig
    mode: str
    objective: str
    iteration: int
    channels: tuple[str, ...]
    stats: NormStats
    include_mask_channels: bool = True
    edm: EdmConfig = field(default_factory=EdmConfig)
    ddpm_betas: list[float] | None = None

    @property
    def conditional(self) -> bool:
        return self.mode != "unconditional"

    def schedule(self) -> DdpmSchedule:
        if self.ddpm_betas is None:
            raise ConfigurationError("checkpoint has no discrete noise schedule")
        return DdpmSchedule(np.asarray(self.ddpm_betas, dtype=np.float64))


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    telemetry: list[dict]


class TrainingDiverged(NumericalError):
    def __init__(self, iteration: int, last_good: Checkpoint | None):
        super().__init__(f"non-finite loss at iteration {iteration}")
        self.iteration = iteration
        self.last_good = last_good


def _mode_task(mode: str) -> TaskId | None:
    if mode not in MODES:
        raise ConfigurationError(f"unknown training mode {mode!r}; expected one of {MODES}")
    if mode.startswith("conditional:"):
        return TaskId.from_name(mode.split(":", 1)[1])
    return None


def input_channel_count(n_channels: int, mode: str, include_mask_channels: bool) -> int:
    if mode == "unconditional":
        return n_channels
    return n_channels * (3 if include_mask_channels else 2)


def _snapshot(net: UNet, ema: dict[str, torch.Tensor]) -> tuple[dict, dict]:
    params = {k: v.detach().cpu().numpy().astype(np.float32).copy() for k, v in net.state_dict().items()}
    ema_np = {k: v.detach().cpu().numpy().astype(np.float32).copy() for k, v in ema.items()}
    return params, ema_np


def train(
    fields: list[Field],
    stats: NormStats,
    mode: str,
    objective: str,
    train_config: TrainConfig,
    master_seed: int,
    net_config: NetConfig | None = None,
    edm_config: EdmConfig | None = None,
    schedule: DdpmSchedule | None = None,
    task_weights: dict[TaskId, float] | None = None,
    telemetry_path: str | None = None,
) -> TrainResult:
    """Train a denoiser on normalized fields and return the checkpoint.

    Iteration loop: sample task -> sample batch -> sample noise level ->
    assemble masked input -> loss -> optimizer step -> EMA update. A
    non-finite loss aborts with the iteration number and the last snapshot.
    """
    if objective not in OBJECTIVES:
        raise ConfigurationError(f"unknown objective {objective!r}; expected one of {OBJECTIVES}")
    fixed_task = _mode_task(mode)
    if not fields:
        raise ConfigurationError("empty training set")
    channels = fields[0].channels
    data = np.stack([f.data for f in fields]).astype(np.float32)
    _n, n_ch, n_time, n_space = data.shape
    shape = (n_ch, n_time, n_space)

    edm_config = edm_config or EdmConfig()
    if objective == "ddpm" and schedule is None:
        schedule = DdpmSchedule.linear()
    if net_config is None:
        net_config = NetConfig(
            in_channels=input_channel_count(n_ch, mode, train_config.include_mask_channels),
            out_channels=n_ch,
        )
    net_config.validate_spatial(n_time, n_space)
    expected_in = input_channel_count(n_ch, mode, train_config.include_mask_channels)
    if net_config.in_channels != expected_in:
        raise ConfigurationError(
            f"net in_channels {net_config.in_channels} inconsistent with mode {mode!r} "
            f"and {n_ch} data channels (expected {expected_in})"
        )

    torch.manual_seed(derive_seed(master_seed, 11))
    net = UNet(net_config)
    net.train()
    optimizer = torch.optim.Adam(
        net.parameters(), lr=train_config.lr,
        betas=(train_config.adam_beta1, train_config.adam_beta2),
    )
    ema = {k: v.detach().clone() for k, v in net.state_dict().items()}
    rng = derive_rng(master_seed, 10)

    def make_checkpoint(iteration: int) -> Checkpoint:
        params, ema_np = _snapshot(net, ema)
        return Checkpoint(
            params=params,
            ema_params=ema_np,
            net_config=net_config,
            mode=mode,
            objective=objective,
            iteration=iteration,
            channels=channels,
            stats=stats,
            include_mask_channels=train_config.include_mask_channels,
            edm=edm_config,
            ddpm_betas=None if schedule is None else [float(b) for b in schedule.betas],
        )

    telemetry: list[dict] = []
    telemetry_file = open(telemetry_path, "w", encoding="utf-8") if telemetry_path else None
    last_good: Checkpoint | None = None
    loss_ema: float | None = None
    try:
        for iteration in range(1, train_config.iterations + 1):
            if mode == "unconditional":
                mask = unconditional_mask(shape)
                task_name = "unconditional"
            else:
                if fixed_task is not None:
                    weights = {fixed_task: 1.0}
                else:
                    weights = task_weights
                task, prefix = sample_task(rng, weights, train_config.prefix_range)
                mask = mask_for_task(task, shape, prefix)
                task_name = task.value

            idx = rng.integers(0, len(fields), size=train_config.batch_size)
            clean = data[idx]
            if objective == "edm":
                loss = edm_loss(
                    net, clean, mask, edm_config, rng,
                    conditional=mode != "unconditional",
                    include_mask_channels=train_config.include_mask_channels,
                )
            else:
                loss = ddpm_loss(
                    net, clean, mask, schedule, rng,
                    conditional=mode != "unconditional",
                    include_mask_channels=train_config.include_mask_channels,
                )
            loss_value = float(loss.detach())
            if not np.isfinite(loss_value):
                raise TrainingDiverged(iteration, last_good)

            optimizer.zero_grad()
            loss.backward()
            torch.nn.utils.clip_grad_norm_(net.parameters(), train_config.grad_clip)
            optimizer.step()
            with torch.no_grad():
                for name, value in net.state_dict().items():
                    ema[name].mul_(train_config.ema_decay).add_(value, alpha=1.0 - train_config.ema_decay)

            loss_ema = loss_value if loss_ema is None else 0.95 * loss_ema + 0.05 * loss_value
            record = {"iteration": iteration, "task": task_name, "loss": loss_value, "loss_ema": loss_ema}
            telemetry.append(record)
            if telemetry_file is not None:
                telemetry_file.write(json.dumps(record) + "\n")
            if iteration % train_config.telemetry_every == 0:
                last_good = make_checkpoint(iteration)
    finally:
        if telemetry_file is not None:
            telemetry_file.close()

    return TrainResult(checkpoint=make_checkpoint(train_config.iterations), telemetry=telemetry)


# ---------------------------------------------------------------------------
# checkpoint persistence (same container discipline as datasets)


def save_checkpoint(ckpt: Checkpoint, directory: str) -> None:
    os.makedirs(directory, exist_ok=True)
    tensor_index = []
    for group, tensors in (("params", ckpt.params), ("ema", ckpt.ema_params)):
        for i, (name, value) in enumerate(sorted(tensors.items())):
            file_name = f"{group}_{i:04d}.f32"
            write_array_atomic(os.path.join(directory, file_name), value)
            tensor_index.append(
                {"group": group, "name": name, "shape": list(value.shape), "file": file_name}
            )
    doc = {
        "format_version": 1,
        "net_config": ckpt.net_config.to_json(),
        "mode": ckpt.mode,
        "objective": ckpt.objective,
        "iteration": ckpt.iteration,
        "channels": list(ckpt.channels),
        "norm_stats": {
            "mean": [float(v) for v in ckpt.stats.mean],
            "std": [float(v) for v in ckpt.stats.std],
        },
        "include_mask_channels": ckpt.include_mask_channels,
        "edm": {
            "sigma_min": ckpt.edm.sigma_min,
            "sigma_max": ckpt.edm.sigma_max,
            "rho": ckpt.edm.rho,
            "sigma_data": ckpt.edm.sigma_data,
            "p_mean": ckpt.edm.p_mean,
            "p_std": ckpt.edm.p_std,
        },
        "ddpm_betas": ckpt.ddpm_betas,
        "tensors": tensor_index,
    }
    write_json_atomic(os.path.join(directory, "manifest.json"), doc)


def load_checkpoint(directory: str) -> Checkpoint:
    path = os.path.join(directory, "manifest.json")
    if not os.path.exists(path):
        raise DataError(f"no checkpoint manifest in {directory}")
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("format_version") != 1:
        raise DataError(f"unsupported checkpoint format_version {doc.get('format_version')}")
    groups: dict[str, dict[str, np.ndarray]] = {"params": {}, "ema": {}}
    for entry in doc["tensors"]:
        file_path = os.path.join(directory, entry["file"])
        shape = tuple(entry["shape"])
        expected = int(np.prod(shape)) * 4 if shape else 4
        if not os.path.exists(file_path):
            raise DataError(f"missing tensor file for {entry['name']!r}")
        actual = os.path.getsize(file_path)
        if actual != expected:
            raise DataError(
                f"tensor {entry['name']!r}: {actual} bytes on disk, expected {expected} for shape {shape}"
            )
        with open(file_path, "rb") as fh:
            value = np.frombuffer(fh.read(), dtype="<f4").reshape(shape).copy()
        groups[entry["group"]][entry["name"]] = value
    channels = tuple(doc["channels"])
    return Checkpoint(
        params=groups["params"],
        ema_params=groups["ema"],
        net_config=NetConfig(**doc["net_config"]),
        mode=doc["mode"],
        objective=doc["objective"],
        iteration=int(doc["iteration"]),
        channels=channels,
        stats=NormStats(channels, doc["norm_stats"]["mean"], doc["norm_stats"]["std"]),
        include_mask_channels=bool(doc["include_mask_channels"]),
        edm=EdmConfig(**doc["edm"]),
        ddpm_betas=doc.get("ddpm_betas"),
    )


# ---------------------------------------------------------------------------
# sampling adapters


def build_net(ckpt: Checkpoint, use_ema: bool = True) -> UNet:
    net = UNet(ckpt.net_config)
    source = ckpt.ema_params if use_ema else ckpt.params
    state = {k: torch.from_numpy(np.ascontiguousarray(v)) for k, v in source.items()}
    net.load_state_dict(state)
    net.eval()
    return net


def make_heun_denoiser(ckpt: Checkpoint, conditioning: np.ndarray, mask: TaskMask, use_ema: bool = True):
    """Sampler-facing denoised-estimate callable for a trained checkpoint.

    Handles both objectives: the preconditioned net is applied directly; the
    noise-predicting net is driven through its discrete schedule (nearest
    step for the requested sigma, variance-preserving input scaling).
    """
    net = build_net(ckpt, use_ema)
    cond32 = np.ascontiguousarray(conditioning, dtype=np.float32)
    observed = mask.observed
    m32 = mask.mask.astype(np.float32)
    schedule = ckpt.schedule() if ckpt.objective == "ddpm" else None
    if schedule is not None:
        sigma_ladder = schedule.sigma_of(np.arange(1, schedule.n_steps + 1))

    def blocks_for(batch: int) -> list[torch.Tensor]:
        if not ckpt.conditional:
            return []
        blocks = [torch.from_numpy(m32 * cond32).expand(batch, -1, -1, -1)]
        if ckpt.include_mask_channels:
            blocks.append(torch.from_numpy(np.broadcast_to(m32, cond32.shape).copy()).expand(batch, -1, -1, -1))
        return blocks

    def denoiser(x: np.ndarray, sigma: float) -> np.ndarray:
        squeeze = x.ndim == 3
        batch = np.asarray(x[None] if squeeze else x, dtype=np.float32)
        n = batch.shape[0]
        with torch.no_grad():
            if ckpt.objective == "edm":
                state = torch.from_numpy(np.where(observed, cond32, batch).astype(np.float32))
                sigma_t = torch.full((n,), float(sigma), dtype=torch.float32)
                denoised = edm_denoised(net, state, blocks_for(n), sigma_t, ckpt.edm).numpy()
                denoised = np.where(observed, cond32, denoised)
            else:
                t_idx = int(np.argmin(np.abs(sigma_ladder - sigma))) + 1
                ab = float(schedule.alpha_bar(t_idx))
                x_vp = np.sqrt(ab) * batch
                state_np = np.where(observed, cond32, x_vp).astype(np.float32)
                if ckpt.conditional:
                    blocks = [torch.from_numpy(state_np)] + list(blocks_for(n))
                    inp = torch.cat(blocks, dim=1)
                else:
                    inp = torch.from_numpy(state_np)
                labels = torch.full((n,), float(t_idx), dtype=torch.float32)
                eps = net(inp, labels).numpy()
                denoised = np.where(observed, cond32, batch - sigma * eps)
        denoised = denoised.astype(np.float64)
        return denoised[0] if squeeze else denoised

    return denoiser


def make_eps_model(ckpt: Checkpoint, use_ema: bool = True):
    """Noise-prediction callable for ancestral/resampling inference."""
    if ckpt.objective != "ddpm":
        raise ConfigurationError("resampling inference needs a noise-predicting checkpoint")
    if ckpt.conditional:
        raise ConfigurationError("resampling inference expects an unconditionally trained checkpoint")
    net = build_net(ckpt, use_ema)

    def eps_model(x: np.ndarray, t: int) -> np.ndarray:
        squeeze = x.ndim == 3
        batch = np.asarray(x[None] if squeeze else x, dtype=np.float32)
        with torch.no_grad():
            labels = torch.full((batch.shape[0],), float(t), dtype=torch.float32)
            eps = net(torch.from_numpy(batch), labels).numpy().astype(np.float64)
        return eps[0] if squeeze else eps

    return eps_model


def draw_samples(
    ckpt: Checkpoint,
    conditioning: np.ndarray,
    mask: TaskMask,
    sampler: SamplerConfig,
    rng: np.random.Generator,
    n_samples: int,
    use_ema: bool = True,
) -> np.ndarray:
    """[n_samples, C, T, X] batch from the checkpoint's natural sampler."""
    if sampler.mode == "repaint":
        eps_model = make_eps_model(ckpt, use_ema)
        return repaint_sample(eps_model, conditioning, mask, sampler, ckpt.schedule(), rng, n_samples)
    denoiser = make_heun_denoiser(ckpt, conditioning, mask, use_ema)
    return heun_sample(denoiser, conditioning, mask, sampler, ckpt.edm, rng, n_samples)
