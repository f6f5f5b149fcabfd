"""Small residual U-Net denoiser with a noise-level embedding.

Encoder of residual conv blocks with factor-2 downsampling, a bottleneck
block, and a decoder with skip connections; the noise-level embedding
(sinusoidal features through a 2-layer MLP) is added inside every residual
block. The final convolution is zero-initialized so an untrained net is the
zero map.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn as nn

from .errors import ConfigurationError


@dataclass(frozen=True)
class NetConfig:
    in_channels: int
    out_channels: int
    base_width: int = 32
    depth: int = 3
    embedding_dim: int = 128

    def __post_init__(self) -> None:
        if self.in_channels < 1 or self.out_channels < 1:
            raise ConfigurationError("channel counts must be positive")
        if not 1 <= self.depth <= 4:
            raise ConfigurationError(f"depth must be in [1, 4], got {self.depth}")
        if self.base_width % 8 != 0:
            raise ConfigurationError("base_width must be a multiple of 8 (group norm)")

    def validate_spatial(self, n_time: int, n_space: int) -> None:
        factor = 2**self.depth
        if n_time % factor or n_space % factor:
            raise ConfigurationError(
                f"spatial dims ({n_time}, {n_space}) must be divisible by 2^depth = {factor}"
            )

    def to_json(self) -> dict:
        return {
            "in_channels": self.in_channels,
            "out_channels": self.out_channels,
            "base_width": self.base_width,
            "depth": self.depth,
            "embedding_dim": self.embedding_dim,
        }


def sinusoidal_embedding(values: torch.Tensor, dim: int) -> torch.Tensor:
    """Log-spaced sin/cos features of a batch of scalar noise labels."""
    half = dim // 2
    freqs = torch.exp(
        -math.log(10_000.0) * torch.arange(half, dtype=values.dtype, device=values.device) / max(half - 1, 1)
    )
    args = values[:, None] * freqs[None, :]
    return torch.cat([torch.sin(args), torch.cos(args)], dim=1)


class ResidualBlock(nn.Module):
    def __init__(self, c_in: int, c_out: int, emb_dim: int):
        super().__init__()
        self.norm1 = nn.GroupNorm(min(8, c_in), c_in)
        self.conv1 = nn.Conv2d(c_in, c_out, 3, padding=1)
        self.emb = nn.Linear(emb_dim, c_out)
        self.norm2 = nn.GroupNorm(min(8, c_out), c_out)
        self.conv2 = nn.Conv2d(c_out, c_out, 3, padding=1)
        self.skip = nn.Conv2d(c_in, c_out, 1) if c_in != c_out else nn.Identity()

    def forward(self, x: torch.Tensor, emb: torch.Tensor) -> torch.Tensor:
        h = self.conv1(torch.nn.functional.silu(self.norm1(x)))
        h = h + self.emb(emb)[:, :, None, None]
        h = self.conv2(torch.nn.functional.silu(self.norm2(h)))
        return h + self.skip(x)


class UNet(nn.Module):
    """``forward(x, noise_labels)``: [B, in_C, T, X] -> [B, out_C, T, X]."""

    def __init__(self, config: NetConfig):
        super().__init__()
        self.config = config
        widths = [config.base_width * 2**i for i in range(config.depth)]
        emb = config.embedding_dim
        self.embed_mlp = nn.Sequential(nn.Linear(emb, emb), nn.SiLU(), nn.Linear(emb, emb))
        self.conv_in = nn.Conv2d(config.in_channels, widths[0], 3, padding=1)
        self.down_blocks = nn.ModuleList()
        c = widths[0]
        for w in widths:
            self.down_blocks.append(ResidualBlock(c, w, emb))
            c = w
        self.middle = ResidualBlock(c, c, emb)
        self.up_blocks = nn.ModuleList()
        for w in reversed(widths):
            self.up_blocks.append(ResidualBlock(c + w, w, emb))
            c = w
        self.conv_out = nn.Conv2d(c, config.out_channels, 3, padding=1)
        nn.init.zeros_(self.conv_out.weight)
        nn.init.zeros_(self.conv_out.bias)
        self.pool = nn.AvgPool2d(2)
        self.up = nn.Upsample(scale_factor=2, mode="nearest")

    def forward(self, x: torch.Tensor, noise_labels: torch.Tensor) -> torch.Tensor:
        if x.dim() != 4 or x.shape[1] != self.config.in_channels:
            raise ConfigurationError(
                f"expected [B, {self.config.in_channels}, T, X] input, got {tuple(x.shape)}"
            )
        self.config.validate_spatial(x.shape[2], x.shape[3])
        emb = self.embed_mlp(sinusoidal_embedding(noise_labels.to(x.dtype), self.config.embedding_dim))
        skips = []
        h = self.conv_in(x)
        for block in self.down_blocks:
            h = block(h, emb)
            skips.append(h)
            h = self.pool(h)
        h = self.middle(h, emb)
        for block in self.up_blocks:
            h = torch.cat([self.up(h), skips.pop()], dim=1)
            h = block(h, emb)
        return self.conv_out(h)
