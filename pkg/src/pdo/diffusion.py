"""Noise schedules, denoising losses, and samplers.

Two formulations are supported:

* a discrete schedule with linearly increasing noise variances, trained by
  predicting the injected noise, sampled ancestrally (optionally with
  inpainting-style resampling of known entries);
* a continuous sigma formulation with input/output preconditioning, a
  log-normal training sigma distribution, a power-law inference sigma
  ladder, and a deterministic 2nd-order Heun probability-flow sampler.

Conditioning is enforced by projection: observed entries are held at their
clean values in the sampler state at every step, matching the training-time
input assembly.

Sampler-facing denoisers are plain callables on numpy arrays:

    denoiser(x, sigma) -> denoised estimate      (Heun; x may have a leading
                                                  sample axis)
    eps_model(x, t)    -> noise estimate         (ancestral/resampling)

Training-facing losses take a torch callable ``net(x, labels) -> out`` and
return a differentiable scalar.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .errors import ConfigurationError, NumericalError
from .masks import TaskMask, assemble_input

# ---------------------------------------------------------------------------
# discrete (DDPM-style) schedule


@dataclass(frozen=True)
class DdpmSchedule:
    betas: np.ndarray

    def __post_init__(self) -> None:
        betas = np.asarray(self.betas, dtype=np.float64)
        if betas.ndim != 1 or len(betas) < 1:
            raise ConfigurationError("betas must be a 1D array")
        if not (0 < betas[0] <= betas[-1] < 1) or (np.diff(betas) < 0).any():
            raise ConfigurationError("betas must be nondecreasing within (0, 1)")
        object.__setattr__(self, "betas", betas)
        alpha_bars = np.cumprod(1.0 - betas)
        if alpha_bars[-1] >= 1e-4:
            raise ConfigurationError(
                f"terminal alpha_bar {alpha_bars[-1]:.2e} too large; inputs at t=T must be near-Gaussian"
            )
        object.__setattr__(self, "alpha_bars", alpha_bars)

    @classmethod
    def linear(cls, n_steps: int = 1000, beta_start: float = 1e-4, beta_end: float = 0.02) -> "DdpmSchedule":
        return cls(np.linspace(beta_start, beta_end, n_steps))

    @property
    def n_steps(self) -> int:
        return len(self.betas)

    def alpha_bar(self, t: int | np.ndarray) -> np.ndarray:
        t = np.asarray(t)
        if ((t < 1) | (t > self.n_steps)).any():
            raise ConfigurationError(f"step index outside [1, {self.n_steps}]")
        return self.alpha_bars[t - 1]

    def sigma_of(self, t: int | np.ndarray) -> np.ndarray:
        """Equivalent variance-exploding sigma of step t."""
        ab = self.alpha_bar(t)
        return np.sqrt((1.0 - ab) / ab)


def ddpm_forward(
    x0: np.ndarray,
    t: int | np.ndarray,
    noise: np.ndarray,
    schedule: DdpmSchedule,
    mask: TaskMask | None = None,
) -> np.ndarray:
    """Noised state at step t; observed entries pass through clean."""
    ab = schedule.alpha_bar(t)
    if np.ndim(ab) > 0:
        ab = ab.reshape((-1,) + (1,) * (x0.ndim - 1))
    x_t = np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * noise
    if mask is not None:
        x_t = np.where(mask.observed, x0, x_t)
    return x_t.astype(x0.dtype, copy=False)


# ---------------------------------------------------------------------------
# continuous (preconditioned) formulation


@dataclass(frozen=True)
class EdmConfig:
    sigma_min: float = 0.002
    sigma_max: float = 80.0
    rho: float = 7.0
    sigma_data: float = 0.5
    p_mean: float = -1.2
    p_std: float = 1.2

    def __post_init__(self) -> None:
        if not 0 < self.sigma_min < self.sigma_max:
            raise ConfigurationError("need 0 < sigma_min < sigma_max")
        if self.rho < 1:
            raise ConfigurationError(f"rho must be >= 1, got {self.rho}")
        if self.sigma_data <= 0 or self.p_std <= 0:
            raise ConfigurationError("sigma_data and p_std must be positive")


def edm_precondition(sigma, config: EdmConfig):
    """Scalings (c_skip, c_out, c_in, c_noise) for a noise level sigma."""
    sigma = np.asarray(sigma, dtype=np.float64)
    if (sigma <= 0).any():
        raise ConfigurationError("sigma must be positive")
    sd2 = config.sigma_data**2
    total = sigma**2 + sd2
    c_skip = sd2 / total
    c_out = sigma * config.sigma_data / np.sqrt(total)
    c_in = 1.0 / np.sqrt(total)
    c_noise = np.log(sigma) / 4.0
    return c_skip, c_out, c_in, c_noise


def edm_weight(sigma, config: EdmConfig):
    """Loss weight lambda(sigma) = (sigma^2 + sigma_data^2) / (sigma sigma_data)^2."""
    sigma = np.asarray(sigma, dtype=np.float64)
    return (sigma**2 + config.sigma_data**2) / (sigma * config.sigma_data) ** 2


def draw_training_sigmas(rng: np.random.Generator, n: int, config: EdmConfig) -> np.ndarray:
    """Log-normal noise levels: ln sigma ~ N(p_mean, p_std^2)."""
    return np.exp(config.p_mean + config.p_std * rng.standard_normal(n))


def karras_sigmas(n: int, config: EdmConfig) -> np.ndarray:
    """Power-law sigma ladder of n levels plus a terminal zero.

    Strictly decreasing from sigma_max to sigma_min; larger rho spends more
    of the step budget at small noise levels.
    """
    if n < 1:
        raise ConfigurationError(f"need at least one step, got {n}")
    if n == 1:
        return np.array([config.sigma_max, 0.0])
    inv = 1.0 / config.rho
    i = np.arange(n)
    sigmas = (
        config.sigma_max**inv + i / (n - 1) * (config.sigma_min**inv - config.sigma_max**inv)
    ) ** config.rho
    return np.concatenate([sigmas, [0.0]])


@dataclass(frozen=True)
class SamplerConfig:
    mode: str = "heun"  # "heun" | "repaint"
    n_steps: int = 32
    jump_length: int = 10
    n_resample: int = 5

    def __post_init__(self) -> None:
        if self.mode not in ("heun", "repaint"):
            raise ConfigurationError(f"unknown sampler mode {self.mode!r}")
        if self.mode == "heun" and self.n_steps < 2:
            raise ConfigurationError("the 2nd-order sampler needs at least 2 steps")
        if self.n_steps < 1 or self.jump_length < 1 or self.n_resample < 1:
            raise ConfigurationError("sampler counts must be positive")


# ---------------------------------------------------------------------------
# samplers


def _project(x: np.ndarray, conditioning: np.ndarray, observed: np.ndarray) -> np.ndarray:
    return np.where(observed, conditioning, x)


def _check_finite(values: np.ndarray, step: int, what: str) -> np.ndarray:
    if not np.isfinite(values).all():
        raise NumericalError(f"{what} produced non-finite values at step {step}")
    return values


def heun_sample_from(
    denoiser,
    x_init: np.ndarray,
    conditioning: np.ndarray,
    mask: TaskMask,
    sampler: SamplerConfig,
    config: EdmConfig,
) -> np.ndarray:
    """Integrate the probability-flow trajectory from an explicit start.

    ``x_init`` is the state at sigma_max (conditioning on observed entries,
    sigma_max-scaled noise elsewhere); a leading sample axis is allowed.
    Euler predictor + trapezoidal corrector per level, final step to zero
    noise is Euler-only; observed entries are re-projected every stage.
    """
    observed = mask.observed
    if not mask.generated.any():
        return np.broadcast_to(conditioning, x_init.shape).astype(np.float64).copy()
    sigmas = karras_sigmas(sampler.n_steps, config)
    x = _project(np.asarray(x_init, dtype=np.float64), conditioning, observed)
    for i in range(sampler.n_steps):
        s_cur, s_next = sigmas[i], sigmas[i + 1]
        denoised = _check_finite(denoiser(x, float(s_cur)), i, "denoiser")
        d_cur = (x - denoised) / s_cur
        x_euler = _project(x + (s_next - s_cur) * d_cur, conditioning, observed)
        if s_next == 0.0:
            x = x_euler
        else:
            denoised2 = _check_finite(denoiser(x_euler, float(s_next)), i, "denoiser")
            d_next = (x_euler - denoised2) / s_next
            x = x + (s_next - s_cur) * 0.5 * (d_cur + d_next)
        x = _project(x, conditioning, observed)
    return x


def heun_sample(
    denoiser,
    conditioning: np.ndarray,
    mask: TaskMask,
    sampler: SamplerConfig,
    config: EdmConfig,
    rng: np.random.Generator,
    n_samples: int | None = None,
) -> np.ndarray:
    """Draw samples consistent with the conditioning on observed entries.

    Returns conditioning.shape for ``n_samples=None``, else a stacked
    [n_samples, ...] batch whose initial noise comes from ``rng`` in order.
    """
    shape = conditioning.shape if n_samples is None else (n_samples, *conditioning.shape)
    noise = rng.standard_normal(shape)
    x_init = config.sigma_max * noise
    out = heun_sample_from(denoiser, x_init, conditioning, mask, sampler, config)
    return out


def _strided_steps(n_schedule: int, n_steps: int) -> np.ndarray:
    """Descending subset of 1..n_schedule with n_steps distinct entries."""
    return np.unique(np.linspace(1, n_schedule, min(n_steps, n_schedule)).round().astype(int))[::-1]


def repaint_sample(
    eps_model,
    known: np.ndarray,
    mask: TaskMask,
    sampler: SamplerConfig,
    schedule: DdpmSchedule,
    rng: np.random.Generator,
    n_samples: int | None = None,
) -> np.ndarray:
    """Ancestral sampling with known entries re-injected at every level.

    The model is trained unconditionally; conditioning happens only here, by
    overwriting observed entries with forward-noised known values at the
    matching level. Every ``jump_length`` ladder levels the state is
    re-noised back up and the segment is resampled ``n_resample`` times.
    With an all-zero mask and n_resample=1 this is plain ancestral sampling.
    """
    shape = known.shape if n_samples is None else (n_samples, *known.shape)
    observed = mask.observed
    steps = _strided_steps(schedule.n_steps, sampler.n_steps)
    n_levels = len(steps)

    def inject(x: np.ndarray, t: int) -> np.ndarray:
        if not observed.any():
            return x
        ab = float(schedule.alpha_bar(t))
        noised = np.sqrt(ab) * known + np.sqrt(1.0 - ab) * rng.standard_normal(shape)
        return _project(x, noised, observed)

    def ancestral(x: np.ndarray, t: int, s: int, level: int) -> np.ndarray:
        ab_t = float(schedule.alpha_bar(t))
        ab_s = float(schedule.alpha_bar(s))
        a_eff = ab_t / ab_s
        eps = _check_finite(eps_model(x, int(t)), level, "noise model")
        mean = (x - (1.0 - a_eff) / np.sqrt(1.0 - ab_t) * eps) / np.sqrt(a_eff)
        var = (1.0 - a_eff) * (1.0 - ab_s) / (1.0 - ab_t)
        return mean + np.sqrt(var) * rng.standard_normal(shape)

    x = rng.standard_normal(shape)
    x = inject(x, int(steps[0]))
    k = 0
    while k < n_levels - 1:
        k_stop = min(k + sampler.jump_length, n_levels - 1)
        for attempt in range(sampler.n_resample):
            x_segment = x
            for j in range(k, k_stop):
                x_segment = ancestral(x_segment, int(steps[j]), int(steps[j + 1]), j)
                x_segment = inject(x_segment, int(steps[j + 1]))
            if k_stop == n_levels - 1 or attempt == sampler.n_resample - 1:
                x = x_segment
                break
            # Jump back: bridge the segment output up to the current level.
            a_jump = float(schedule.alpha_bar(int(steps[k])) / schedule.alpha_bar(int(steps[k_stop])))
            x = np.sqrt(a_jump) * x_segment + np.sqrt(1.0 - a_jump) * rng.standard_normal(shape)
            x = inject(x, int(steps[k]))
        k = k_stop

    # Final denoise from the last ladder level to clean data.
    t_last = int(steps[-1])
    ab = float(schedule.alpha_bar(t_last))
    eps = _check_finite(eps_model(x, t_last), n_levels - 1, "noise model")
    x = (x - np.sqrt(1.0 - ab) * eps) / np.sqrt(ab)
    return _project(x, known, observed)


# ---------------------------------------------------------------------------
# training losses (torch)


def _to_tensor(array: np.ndarray) -> torch.Tensor:
    return torch.from_numpy(np.ascontiguousarray(array, dtype=np.float32))


def edm_denoised(
    net,
    state: torch.Tensor,
    extra_blocks: list[torch.Tensor],
    sigma: torch.Tensor,
    config: EdmConfig,
) -> torch.Tensor:
    """Preconditioned denoised estimate D = c_skip x + c_out F(c_in x, c_noise).

    ``sigma`` is one noise level per batch element; extra blocks
    (conditioning, mask channels) are concatenated unscaled.
    """
    sd2 = config.sigma_data**2
    total = sigma**2 + sd2
    c_skip = (sd2 / total).view(-1, 1, 1, 1)
    c_out = (sigma * config.sigma_data / total.sqrt()).view(-1, 1, 1, 1)
    c_in = (1.0 / total.sqrt()).view(-1, 1, 1, 1)
    c_noise = sigma.log() / 4.0
    inp = torch.cat([c_in * state] + list(extra_blocks), dim=1)
    return c_skip * state + c_out * net(inp, c_noise)


def _conditional_blocks(
    clean: np.ndarray, mask: TaskMask, include_mask_channels: bool
) -> list[torch.Tensor]:
    m = mask.mask.astype(np.float32)
    blocks = [_to_tensor(m * clean)]
    if include_mask_channels:
        blocks.append(_to_tensor(np.broadcast_to(m, clean.shape)))
    return blocks


def _masked_mse_per_example(diff: torch.Tensor, mask: TaskMask) -> torch.Tensor:
    gen = torch.from_numpy(mask.generated)
    return (diff[..., gen] ** 2).mean(dim=-1)


def ddpm_loss(
    denoiser,
    clean: np.ndarray,
    mask: TaskMask,
    schedule: DdpmSchedule,
    rng: np.random.Generator,
    conditional: bool = True,
    include_mask_channels: bool = True,
) -> torch.Tensor:
    """Noise-prediction MSE over generated entries at a uniform random step."""
    batch = clean.shape[0]
    t = rng.integers(1, schedule.n_steps + 1, size=batch)
    noise = rng.standard_normal(clean.shape).astype(np.float32)
    x_t = ddpm_forward(clean.astype(np.float32), t, noise, schedule, mask)
    if conditional:
        inp = _to_tensor(assemble_input(clean.astype(np.float32), x_t, mask, include_mask_channels))
    else:
        inp = _to_tensor(x_t)
    pred = denoiser(inp, torch.from_numpy(t.astype(np.float32)))
    loss, _degenerate = torch_masked_mean(pred - _to_tensor(noise), mask)
    return loss


def edm_loss(
    denoiser,
    clean: np.ndarray,
    mask: TaskMask,
    config: EdmConfig,
    rng: np.random.Generator,
    conditional: bool = True,
    include_mask_channels: bool = True,
) -> torch.Tensor:
    """Weighted denoising MSE at log-normal noise levels.

    Noise is added to generated entries only; the loss compares the
    preconditioned denoised estimate with the clean data there, weighted by
    lambda(sigma) per example.
    """
    batch = clean.shape[0]
    clean32 = clean.astype(np.float32)
    sigma = draw_training_sigmas(rng, batch, config)
    noise = rng.standard_normal(clean.shape) * sigma[:, None, None, None]
    noisy = (clean32 + noise).astype(np.float32)
    state_np = np.where(mask.observed, clean32, noisy)

    state = _to_tensor(state_np)
    blocks = _conditional_blocks(clean32, mask, include_mask_channels) if conditional else []
    sigma_t = torch.from_numpy(sigma.astype(np.float32))
    denoised = edm_denoised(denoiser, state, blocks, sigma_t, config)

    if not mask.generated.any():
        return denoised.sum() * 0.0
    per_example = _masked_mse_per_example(denoised - _to_tensor(clean32), mask)
    weight = torch.from_numpy(edm_weight(sigma, config).astype(np.float32))
    return (weight * per_example).mean()


def torch_masked_mean(diff: torch.Tensor, mask: TaskMask) -> tuple[torch.Tensor, bool]:
    """Mean of squared entries over the generated region (0 if none)."""
    gen = mask.generated
    if not gen.any():
        return diff.sum() * 0.0, True
    sel = torch.from_numpy(gen)
    return (diff[..., sel] ** 2).mean(), False
