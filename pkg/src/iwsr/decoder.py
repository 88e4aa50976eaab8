"""Physics-informed continuation network: a coordinate-conditioned residual
MLP that decodes the encoder's feature grid at arbitrary continuous
spatio-temporal points.

Points live in the normalized cube [0, 1]^3 ordered (t, z, x).  For each
point the feature grid is trilinearly interpolated, concatenated with the
coordinates, and pushed through a fixed-width residual MLP whose every layer
re-receives the raw coordinates.  Output channels are the four field
variables (T, S, u, w) plus a fifth auxiliary pressure channel used only by
the physics residuals.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import ContractError, DimensionError, Tensor, concat, matmul, reshape, silu, trilinear_sample

OUT_NAMES = ("T", "S", "u", "w", "p")


class LinearLayer:
    def __init__(self, fan_in: int, fan_out: int, rng, zero_init: bool = False):
        if zero_init:
            self.weight = ad.zeros_init((fan_in, fan_out))
            self.bias = ad.zeros_init((fan_out,))
        else:
            self.weight = ad.uniform_init((fan_in, fan_out), fan_in, rng)
            self.bias = ad.uniform_init((fan_out,), fan_in, rng)

    def __call__(self, x: Tensor) -> Tensor:
        return matmul(x, self.weight) + reshape(self.bias, (1, -1))

    def named_parameters(self, prefix: str) -> dict[str, Tensor]:
        return {f"{prefix}.weight": self.weight, f"{prefix}.bias": self.bias}


@dataclass
class PcnConfig:
    latent_channels: int = 32
    depth: int = 6
    width: int = 128
    out_channels: int = len(OUT_NAMES)
    zero_head: bool = False

    def __post_init__(self):
        if self.depth < 2:
            raise DimensionError("decoder depth must be >= 2")
        if self.width < 1 or self.latent_channels < 1:
            raise DimensionError("decoder widths must be >= 1")


class Pcn:
    """depth-layer residual MLP; coordinates re-injected at every layer."""

    def __init__(self, cfg: PcnConfig, rng=None):
        rng = np.random.default_rng(0) if rng is None else rng
        self.cfg = cfg
        self.entry = LinearLayer(cfg.latent_channels + 3, cfg.width, rng)
        self.hidden = [LinearLayer(cfg.width + 3, cfg.width, rng)
                       for _ in range(cfg.depth - 1)]
        self.head = LinearLayer(cfg.width + 3, cfg.out_channels, rng,
                                zero_init=cfg.zero_head)

    def __call__(self, features: Tensor, points: Tensor) -> Tensor:
        if features.ndim != 2 or points.ndim != 2 or points.shape[1] != 3:
            raise DimensionError(
                f"expected features [N, C] and points [N, 3], got "
                f"{features.shape} and {points.shape}")
        if features.shape[0] != points.shape[0]:
            raise DimensionError(
                f"feature rows ({features.shape[0]}) != point rows ({points.shape[0]})")
        if features.shape[0] == 0:
            raise ContractError("decoder called with an empty point batch")
        if features.shape[1] != self.cfg.latent_channels:
            raise DimensionError(
                f"feature width {features.shape[1]} != configured "
                f"latent_channels {self.cfg.latent_channels}")
        h = silu(self.entry(concat([features, points], axis=1)))
        for layer in self.hidden:
            h = h + silu(layer(concat([h, points], axis=1)))
        return self.head(concat([h, points], axis=1))

    def named_parameters(self, prefix: str = "decoder") -> dict[str, Tensor]:
        params = self.entry.named_parameters(f"{prefix}.entry")
        for i, layer in enumerate(self.hidden):
            params.update(layer.named_parameters(f"{prefix}.hidden{i}"))
        params.update(self.head.named_parameters(f"{prefix}.head"))
        return params


def interpolate_latent(latent: Tensor, points: Tensor) -> Tensor:
    """Trilinear features [N, C] of a latent grid [C, T, Z, X] at [N, 3]."""
    return trilinear_sample(latent, points)


def predict(latent: Tensor, points: Tensor, pcn: Pcn) -> Tensor:
    """Decode a latent grid at continuous points -> [N, out_channels]."""
    return pcn(interpolate_latent(latent, points), points)
