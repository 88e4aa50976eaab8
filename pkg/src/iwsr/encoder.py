"""High-frequency feature encoder: a U-Net of residual blocks that combine a
3x3x3 convolution path, an FFT-domain 1x1x1 convolution path and a per-voxel
attention gate, mapping a 4-variable low-resolution grid to a same-resolution
32-channel implicit feature grid.

Axis convention is [B, C, T, Z, X].  The down path halves whichever axes
currently have the largest size; the up path replays the recorded schedule
in reverse, so output resolution always equals input resolution.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import (ComplexPair, DimensionError, Tensor, avg_pool, concat,
                       conv3d, fft3, ifft3, group_norm, nearest_upsample,
                       reshape, sigmoid, silu)


class ScheduleError(DimensionError):
    """Down/upsample schedule cannot be applied to the given sizes."""


def _norm_groups(channels: int) -> int:
    g = min(4, channels)
    while channels % g:
        g -= 1
    return g


class Conv3dLayer:
    def __init__(self, cin: int, cout: int, ksize, rng, zero_init: bool = False):
        kt, kz, kx = ksize
        if zero_init:
            self.weight = ad.zeros_init((cout, cin, kt, kz, kx))
            self.bias = ad.zeros_init((cout,))
        else:
            fan_in = cin * kt * kz * kx
            self.weight = ad.uniform_init((cout, cin, kt, kz, kx), fan_in, rng)
            self.bias = ad.uniform_init((cout,), fan_in, rng)

    def __call__(self, x: Tensor) -> Tensor:
        y = conv3d(x, self.weight, padding="same")
        return y + reshape(self.bias, (1, -1, 1, 1, 1))

    def named_parameters(self, prefix: str) -> dict[str, Tensor]:
        return {f"{prefix}.weight": self.weight, f"{prefix}.bias": self.bias}


class GroupNormLayer:
    def __init__(self, channels: int):
        self.groups = _norm_groups(channels)
        self.gamma = ad.ones_init((channels,))
        self.beta = ad.zeros_init((channels,))

    def __call__(self, x: Tensor) -> Tensor:
        return group_norm(x, self.groups, self.gamma, self.beta)

    def named_parameters(self, prefix: str) -> dict[str, Tensor]:
        return {f"{prefix}.gamma": self.gamma, f"{prefix}.beta": self.beta}


@dataclass
class HfrbConfig:
    in_channels: int
    out_channels: int
    kernel: tuple[int, int, int] = (3, 3, 3)
    attention: bool = True
    fft_path: bool = True

    def __post_init__(self):
        if self.in_channels < 1 or self.out_channels < 1:
            raise DimensionError("block channel counts must be >= 1")


class Hfrb:
    """Residual block: skip(x) + gate(x) * conv_path(x) + fft_path(x).

    conv_path = silu(group_norm(conv3x3x3(x))); the gate is a sigmoid of a
    1x1x1 convolution giving one spatio-temporal score per voxel; the FFT
    path convolves real and imaginary spectra separately with 1x1x1 kernels
    and inverse-transforms the merged pair.  The 1x1x1 convolutions of the
    gate and FFT paths start at zero so a fresh block is near-identity.
    """

    def __init__(self, cfg: HfrbConfig, rng):
        self.cfg = cfg
        ci, co = cfg.in_channels, cfg.out_channels
        self.conv = Conv3dLayer(ci, co, cfg.kernel, rng)
        self.norm = GroupNormLayer(co)
        self.gate = Conv3dLayer(ci, 1, (1, 1, 1), rng, zero_init=True) if cfg.attention else None
        if cfg.fft_path:
            self.fft_real = Conv3dLayer(ci, co, (1, 1, 1), rng, zero_init=True)
            self.fft_imag = Conv3dLayer(ci, co, (1, 1, 1), rng, zero_init=True)
        else:
            self.fft_real = self.fft_imag = None
        self.skip = None if ci == co else Conv3dLayer(ci, co, (1, 1, 1), rng)

    def __call__(self, x: Tensor) -> Tensor:
        if x.ndim != 5:
            raise DimensionError(f"block input must be [B, C, T, Z, X], got rank {x.ndim}")
        if x.shape[1] != self.cfg.in_channels:
            raise DimensionError(
                f"channel axis 1 has size {x.shape[1]}, block expects {self.cfg.in_channels}")
        path = silu(self.norm(self.conv(x)))
        if self.gate is not None:
            path = sigmoid(self.gate(x)) * path
        if self.fft_real is not None:
            spec = fft3(x)
            merged = ComplexPair(self.fft_real(spec.real), self.fft_imag(spec.imag))
            path = path + ifft3(merged)
        base = x if self.skip is None else self.skip(x)
        return base + path

    def named_parameters(self, prefix: str) -> dict[str, Tensor]:
        params = {}
        params.update(self.conv.named_parameters(f"{prefix}.conv"))
        params.update(self.norm.named_parameters(f"{prefix}.norm"))
        if self.gate is not None:
            params.update(self.gate.named_parameters(f"{prefix}.gate"))
        if self.fft_real is not None:
            params.update(self.fft_real.named_parameters(f"{prefix}.fft_real"))
            params.update(self.fft_imag.named_parameters(f"{prefix}.fft_imag"))
        if self.skip is not None:
            params.update(self.skip.named_parameters(f"{prefix}.skip"))
        return params


@dataclass
class EncoderConfig:
    down_channels: tuple[int, ...] = (16, 32, 64, 128, 256)
    up_channels: tuple[int, ...] = (128, 64, 32, 16, 32)
    in_channels: int = 4
    attention: bool = True
    fft_path: bool = True

    def __post_init__(self):
        if len(self.down_channels) != len(self.up_channels):
            raise DimensionError("down and up channel ladders must have equal length")
        if len(self.down_channels) < 2:
            raise DimensionError("encoder needs at least two stages per ladder")

    @property
    def out_channels(self) -> int:
        return self.up_channels[-1]

    def scaled(self, divisor: int) -> "EncoderConfig":
        """Shrink interior widths (latent width is kept)."""
        down = tuple(max(2, c // divisor) for c in self.down_channels)
        up = tuple(max(2, c // divisor) for c in self.up_channels[:-1]) + (self.up_channels[-1],)
        return EncoderConfig(down, up, self.in_channels, self.attention, self.fft_path)


def _halving_axes(sizes: tuple[int, int, int]) -> tuple[int, ...]:
    m = max(sizes)
    if m <= 1:
        raise ScheduleError(f"cannot halve any axis of sizes {sizes}")
    axes = tuple(i for i, s in enumerate(sizes) if s == m)
    for i in axes:
        if sizes[i] % 2:
            raise ScheduleError(f"axis {i} (size {sizes[i]}) is odd and cannot be halved")
    return axes


def downsample_schedule(sizes, steps: int) -> list[tuple[int, int, int]]:
    """Per-step pooling factors: halve every axis tied for the largest size."""
    sizes = tuple(int(s) for s in sizes)
    schedule = []
    for _ in range(steps):
        axes = _halving_axes(sizes)
        factors = tuple(2 if i in axes else 1 for i in range(3))
        schedule.append(factors)
        sizes = tuple(s // f for s, f in zip(sizes, factors))
    return schedule


def downsample_stage(x: Tensor) -> tuple[Tensor, tuple[int, int, int]]:
    factors = downsample_schedule(x.shape[-3:], 1)[0]
    return avg_pool(x, factors), factors


def upsample_stage(x: Tensor, factors) -> Tensor:
    return nearest_upsample(x, factors)


class Encoder:
    """U-Net over residual FFT/attention blocks; output resolution == input."""

    def __init__(self, cfg: EncoderConfig, rng=None):
        rng = np.random.default_rng(0) if rng is None else rng
        self.cfg = cfg
        down, up = cfg.down_channels, cfg.up_channels
        k = len(down)

        def block(ci, co):
            return Hfrb(HfrbConfig(ci, co, attention=cfg.attention,
                                   fft_path=cfg.fft_path), rng)

        self.down_blocks = [block(cfg.in_channels, down[0])]
        for i in range(1, k):
            self.down_blocks.append(block(down[i - 1], down[i]))

        self.up_blocks = [block(down[-1], up[0])]  # bottleneck
        self.fuse_convs = []
        for j in range(1, k):
            carried = up[j - 1]
            skip_ch = down[k - j]  # mirrored pre-downsample feature
            fuse_out = carried if j < k - 1 else 2 * carried
            self.fuse_convs.append(
                Conv3dLayer(carried + skip_ch, fuse_out, (1, 1, 1), rng))
            self.up_blocks.append(block(fuse_out, up[j]))

    def __call__(self, x: Tensor, trace: list | None = None) -> Tensor:
        if x.ndim == 4:
            x = reshape(x, (1,) + x.shape)
            squeeze = True
        elif x.ndim == 5:
            squeeze = False
        else:
            raise DimensionError(f"encoder input must be rank 4 or 5, got {x.ndim}")
        if x.shape[1] != self.cfg.in_channels:
            raise DimensionError(
                f"channel axis 1 has size {x.shape[1]}, encoder expects {self.cfg.in_channels}")
        # Validate the whole schedule up front so bad sizes fail at entry.
        k = len(self.cfg.down_channels)
        downsample_schedule(x.shape[-3:], k - 1)

        def note(op, t):
            if trace is not None:
                trace.append((op, t.shape[1:]))

        skips = []
        h = x
        for i, blk in enumerate(self.down_blocks):
            note("HFRB", h)
            h = blk(h)
            if i >= 1:
                skips.append(h)
                note("DownSamp", h)
                h, factors = downsample_stage(h)
                skips[-1] = (skips[-1], factors)

        note("HFRB", h)
        h = self.up_blocks[0](h)
        for j in range(1, k):
            saved, factors = skips[-j]
            note("UpSamp", h)
            h = upsample_stage(h, factors)
            h = self.fuse_convs[j - 1](concat([h, saved], axis=1))
            note("HFRB", h)
            h = self.up_blocks[j](h)
        note("out", h)
        return reshape(h, h.shape[1:]) if squeeze else h

    def shape_trace(self, sizes) -> list[tuple[str, tuple[int, int, int, int]]]:
        """(op, (C, T, Z, X)) before each operator, for a dry forward pass."""
        x = Tensor(np.zeros((1, self.cfg.in_channels) + tuple(sizes), dtype=np.float32))
        trace: list = []
        self(x, trace=trace)
        return trace

    def named_parameters(self, prefix: str = "encoder") -> dict[str, Tensor]:
        params = {}
        for i, blk in enumerate(self.down_blocks):
            params.update(blk.named_parameters(f"{prefix}.down{i}"))
        for j, blk in enumerate(self.up_blocks):
            params.update(blk.named_parameters(f"{prefix}.up{j}"))
        for j, conv in enumerate(self.fuse_convs):
            params.update(conv.named_parameters(f"{prefix}.fuse{j}"))
        return params
