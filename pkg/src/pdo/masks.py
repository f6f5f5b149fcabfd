"""Observation masks for the five conditioning tasks, and masked model input.

A task mask is a binary array congruent to a field: 1 marks observed entries
that condition the model, 0 marks entries to be generated by denoising. The
five tasks split a field along channels and/or a time prefix:

* task1  first channel group observed, second generated (forward map)
* task2  second channel group observed, first generated (inverse map)
* task3  all channels observed for a time prefix, the future generated
* task4  first group's time prefix observed, everything else generated
* task5  second group's time prefix observed, everything else generated

The first ceil(C/2) channels form the first group; datasets order their
channels so that the forward task's conditioning channels come first.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError

Shape = tuple[int, int, int]


class TaskId(enum.Enum):
    TASK1 = "task1"
    TASK2 = "task2"
    TASK3 = "task3"
    TASK4 = "task4"
    TASK5 = "task5"

    @classmethod
    def from_name(cls, name: str) -> "TaskId":
        try:
            return cls(name.lower())
        except ValueError:
            raise ConfigurationError(
                f"unknown task {name!r}; expected one of {[t.value for t in cls]}"
            ) from None


PREFIX_TASKS = (TaskId.TASK3, TaskId.TASK4, TaskId.TASK5)
CHANNEL_SPLIT_TASKS = (TaskId.TASK1, TaskId.TASK2, TaskId.TASK4, TaskId.TASK5)


def first_group_size(n_channels: int) -> int:
    return (n_channels + 1) // 2


@dataclass(frozen=True)
class TaskMask:
    task: TaskId | None  # None marks the all-zeros unconditional mask
    prefix_fraction: float
    mask: np.ndarray  # uint8 [C, T, X], 1 = observed

    def __post_init__(self) -> None:
        mask = np.ascontiguousarray(self.mask, dtype=np.uint8)
        if mask.ndim != 3 or not np.isin(mask, (0, 1)).all():
            raise ConfigurationError("mask must be a binary [C, T, X] array")
        object.__setattr__(self, "mask", mask)

    @property
    def observed(self) -> np.ndarray:
        return self.mask.astype(bool)

    @property
    def generated(self) -> np.ndarray:
        return ~self.observed


def mask_for_task(task: TaskId, shape: Shape, prefix_fraction: float = 1.0) -> TaskMask:
    """Deterministic mask for ``task`` on a [C, T, X] shape.

    ``prefix_fraction`` sets the observed time prefix for tasks 3-5; the
    prefix covers the first ``int(prefix_fraction * T)`` snapshots.
    """
    n_channels, n_time, n_space = shape
    if not 0.0 < prefix_fraction <= 1.0:
        raise ConfigurationError(f"prefix_fraction must be in (0, 1], got {prefix_fraction}")
    if task in CHANNEL_SPLIT_TASKS and n_channels < 2:
        raise ConfigurationError(f"{task.value} needs at least 2 channels, got {n_channels}")
    split = first_group_size(n_channels)
    prefix = int(prefix_fraction * n_time)
    if task in PREFIX_TASKS and prefix < 1:
        raise ConfigurationError(f"prefix_fraction {prefix_fraction} observes no snapshot")

    mask = np.zeros(shape, dtype=np.uint8)
    if task is TaskId.TASK1:
        mask[:split] = 1
    elif task is TaskId.TASK2:
        mask[split:] = 1
    elif task is TaskId.TASK3:
        mask[:, :prefix] = 1
    elif task is TaskId.TASK4:
        mask[:split, :prefix] = 1
    elif task is TaskId.TASK5:
        mask[split:, :prefix] = 1
    if task in PREFIX_TASKS and prefix == n_time:
        # A full prefix degenerates to the pure channel mask (or everything
        # observed for task3), which would leave nothing to generate.
        if task is TaskId.TASK3:
            raise ConfigurationError("task3 with a full prefix observes everything")
    frac = prefix_fraction if task in PREFIX_TASKS else 1.0
    result = TaskMask(task=task, prefix_fraction=frac, mask=mask)
    assert result.generated.any() and result.observed.any()
    return result


def unconditional_mask(shape: Shape) -> TaskMask:
    """All-zeros mask: everything is generated, nothing conditions."""
    return TaskMask(task=None, prefix_fraction=1.0, mask=np.zeros(shape, dtype=np.uint8))


def sample_task(
    rng: np.random.Generator,
    task_weights: dict[TaskId, float] | None = None,
    prefix_range: tuple[float, float] = (0.25, 0.75),
) -> tuple[TaskId, float]:
    """Draw one (task, prefix_fraction) pair for a mini-batch.

    The prefix fraction is uniform on ``prefix_range`` for tasks 3-5 and
    fixed at 1 for the channel-only tasks.
    """
    tasks = list(TaskId)
    if task_weights is None:
        weights = np.ones(len(tasks))
    else:
        weights = np.array([float(task_weights.get(t, 0.0)) for t in tasks])
    if (weights < 0).any() or weights.sum() <= 0:
        raise ConfigurationError(f"task weights must be nonnegative and not all zero: {weights}")
    task = tasks[int(rng.choice(len(tasks), p=weights / weights.sum()))]
    if task in PREFIX_TASKS:
        lo, hi = prefix_range
        prefix = float(rng.uniform(lo, hi))
    else:
        prefix = 1.0
    return task, prefix


def assemble_input(
    clean: np.ndarray,
    noisy: np.ndarray,
    mask: TaskMask,
    include_mask_channels: bool = True,
) -> np.ndarray:
    """Stack the denoiser input: state block, conditioning block, mask block.

    The state block keeps observed entries noise free and takes noisy values
    elsewhere; the conditioning block zeroes everything unobserved. Identical
    at training and inference time. Supports a leading batch axis.
    """
    if clean.shape != noisy.shape or clean.shape[-3:] != mask.mask.shape:
        raise ConfigurationError(
            f"shape mismatch: clean {clean.shape}, noisy {noisy.shape}, mask {mask.mask.shape}"
        )
    m = mask.mask.astype(clean.dtype)
    state = m * clean + (1 - m) * noisy
    conditioning = m * clean
    blocks = [state, conditioning]
    if include_mask_channels:
        blocks.append(np.broadcast_to(m, clean.shape).astype(clean.dtype))
    return np.concatenate(blocks, axis=-3)


def masked_loss(prediction, target, mask: TaskMask):
    """Mean squared error over generated (mask = 0) entries only.

    Returns ``(loss, degenerate)``; a fully observed mask yields loss 0 with
    ``degenerate`` set. Works on numpy arrays and on torch tensors (the loss
    stays differentiable).
    """
    if tuple(prediction.shape) != tuple(target.shape):
        raise ConfigurationError(f"shape mismatch: {tuple(prediction.shape)} vs {tuple(target.shape)}")
    gen = mask.generated
    if prediction.shape[-3:] != gen.shape:
        raise ConfigurationError(f"mask shape {gen.shape} does not match {tuple(prediction.shape)}")
    if not gen.any():
        return prediction.sum() * 0.0, True
    if hasattr(prediction, "detach"):  # torch tensor
        import torch

        sel = torch.from_numpy(gen).to(prediction.device)
        diff = (prediction - target)[..., sel]
    else:
        diff = (np.asarray(prediction) - np.asarray(target))[..., gen]
    return (diff**2).mean(), False
