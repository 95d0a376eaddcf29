"""Hybrid attention for skip connections: channel gates, spatial gates, and
their joint multiplicative application to a feature map.

Channel gates squeeze the map through global average pooling and a two-layer
bottleneck (sigmoid output); spatial gates convolve the stacked per-pixel
[channel-max, channel-avg] maps. Both gates lie strictly in (0, 1), so the
gated map never exceeds the input in magnitude.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ShapeError
from .nn_ops import (Conv2dParams, channel_avg_pool, channel_max_pool, concat_channels,
                     conv2d, global_avg_pool, relu, sigmoid)
from .tensor import Tensor, matmul, mul_elementwise, reshape, transpose

COMPOSITIONS = ("parallel", "sequential")


@dataclass
class ChannelAttentionParams:
    """Bottleneck matrices w1 [C/r x C] and w2 [C x C/r]; no biases."""

    w1: Tensor
    w2: Tensor
    reduction_ratio: int

    def __post_init__(self):
        r = self.reduction_ratio
        if r < 1:
            raise ConfigError(f"reduction ratio must be >= 1, got {r}")
        c_red, c = self.w1.shape
        if self.w2.shape != (c, c_red):
            raise ShapeError(f"w2 shape {self.w2.shape} does not mirror w1 {self.w1.shape}")
        if c % r != 0 or c // r != c_red:
            raise ConfigError(f"channels {c} not divisible into {c_red} by ratio {r}")

    @property
    def channels(self) -> int:
        return self.w1.shape[1]


@dataclass
class SpatialAttentionParams:
    """A single 2-in 1-out odd-kernel "same" convolution over [max, avg] maps."""

    conv: Conv2dParams

    def __post_init__(self):
        out_ch, in_ch, kh, kw = self.conv.kernel.shape
        if in_ch != 2 or out_ch != 1:
            raise ShapeError(f"spatial attention conv must map 2 -> 1 channels, got {in_ch} -> {out_ch}")
        if kh % 2 == 0 or kh != kw or self.conv.padding != "same":
            raise ShapeError(f'spatial attention conv needs a square odd "same" kernel, got {kh}x{kw}')


def channel_attention(f: Tensor, p: ChannelAttentionParams) -> Tensor:
    """Per-channel gates in (0,1), shape [N, C, 1, 1], from globally pooled stats."""
    if f.data.ndim != 4:
        raise ShapeError(f"channel_attention expects NCHW input, got {f.shape}")
    n, c = f.shape[0], f.shape[1]
    if c != p.channels:
        raise ShapeError(f"channel_attention: input has {c} channels, params expect {p.channels}")
    squeezed = global_avg_pool(f)                       # [N, C]
    hidden = relu(matmul(squeezed, transpose(p.w1)))    # [N, C/r]
    gates = sigmoid(matmul(hidden, transpose(p.w2)))    # [N, C]
    return reshape(gates, (n, c, 1, 1))


def spatial_attention(f: Tensor, p: SpatialAttentionParams) -> Tensor:
    """Per-pixel gates in (0,1), shape [N, 1, H, W]; stacking order [max, avg]."""
    stacked = concat_channels(channel_max_pool(f), channel_avg_pool(f))
    return sigmoid(conv2d(stacked, p.conv))


def hybrid_apply(f: Tensor, w_c: Tensor, w_s: Tensor) -> Tensor:
    """F'[n,c,h,w] = F[n,c,h,w] * w_c[n,c] * w_s[n,h,w] via broadcast multiply."""
    return mul_elementwise(mul_elementwise(f, w_c), w_s)


def hybrid_attention_block(f: Tensor, cp: ChannelAttentionParams, sp: SpatialAttentionParams,
                           composition: str = "parallel") -> Tensor:
    """Gate a skip feature with channel and spatial attention.

    "parallel" (default) derives both gates from the same input and applies
    them jointly; "sequential" derives the spatial gate from the
    channel-gated map instead.
    """
    if composition not in COMPOSITIONS:
        raise ConfigError(f"attention composition must be one of {COMPOSITIONS}, got {composition!r}")
    if composition == "parallel":
        return hybrid_apply(f, channel_attention(f, cp), spatial_attention(f, sp))
    gated = mul_elementwise(f, channel_attention(f, cp))
    return mul_elementwise(gated, spatial_attention(gated, sp))


def init_channel_attention(channels: int, reduction_ratio: int,
                           rng: np.random.Generator) -> ChannelAttentionParams:
    """Fan-in-scaled uniform init keeps initial gates near 0.5."""
    if channels % reduction_ratio != 0 or channels < reduction_ratio:
        raise ConfigError(f"reduction ratio {reduction_ratio} must divide channel count {channels}")
    reduced = channels // reduction_ratio
    s1 = 1.0 / np.sqrt(channels)
    s2 = 1.0 / np.sqrt(reduced)
    w1 = Tensor(rng.uniform(-s1, s1, size=(reduced, channels)), requires_grad=True)
    w2 = Tensor(rng.uniform(-s2, s2, size=(channels, reduced)), requires_grad=True)
    return ChannelAttentionParams(w1=w1, w2=w2, reduction_ratio=reduction_ratio)


def init_spatial_attention(kernel_size: int, rng: np.random.Generator) -> SpatialAttentionParams:
    if kernel_size % 2 == 0 or kernel_size < 1:
        raise ConfigError(f"spatial attention kernel must be odd and positive, got {kernel_size}")
    fan_in = 2 * kernel_size * kernel_size
    s = 1.0 / np.sqrt(fan_in)
    kernel = Tensor(rng.uniform(-s, s, size=(1, 2, kernel_size, kernel_size)), requires_grad=True)
    bias = Tensor(np.zeros(1), requires_grad=True)
    return SpatialAttentionParams(conv=Conv2dParams(kernel=kernel, bias=bias, stride=1, padding="same"))
