"""Convolution, pooling, activation, concat, and dropout kernels.

All ops take NCHW tensors, run vectorized numpy forward passes (direct
convolution looped over kernel offsets only -- no im2col/FFT variants), and
register analytic backward rules on the active tape. Every kernel is checked
against a brute-force loop oracle in the test suite.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ContractError, ShapeError
from .tensor import Array, Tensor, record_op

Padding = int | str


@dataclass
class Conv2dParams:
    """Kernel + bias for conv2d ([out, in, kh, kw]) or transposed_conv2d
    ([in, out, kh, kw]), with stride and padding ("same" or explicit int)."""

    kernel: Tensor
    bias: Tensor
    stride: int = 1
    padding: Padding = 0

    def __post_init__(self):
        if self.kernel.data.ndim != 4:
            raise ShapeError(f"conv kernel must be rank 4, got {self.kernel.shape}")
        if self.bias.data.ndim != 1:
            raise ShapeError(f"conv bias must be rank 1, got {self.bias.shape}")
        if self.stride < 1:
            raise ShapeError(f"stride must be positive, got {self.stride}")
        kh, kw = self.kernel.shape[2], self.kernel.shape[3]
        if self.padding == "same":
            if kh % 2 == 0 or kw % 2 == 0:
                raise ShapeError(f'"same" padding needs odd kernel extents, got {kh}x{kw}')
        elif not isinstance(self.padding, int) or self.padding < 0:
            raise ShapeError(f'padding must be "same" or a non-negative int, got {self.padding!r}')


def _require_nchw(x: Tensor, op: str) -> None:
    if x.data.ndim != 4:
        raise ShapeError(f"{op} expects a rank-4 NCHW tensor, got shape {x.shape}")


def _resolve_padding(p: Conv2dParams) -> int:
    if p.padding == "same":
        return (p.kernel.shape[2] - 1) // 2
    return int(p.padding)


def conv2d(x: Tensor, p: Conv2dParams) -> Tensor:
    """Cross-correlation (no kernel flip) plus bias, NCHW -> NOH'W'."""
    _require_nchw(x, "conv2d")
    kernel, bias, s = p.kernel, p.bias, p.stride
    out_ch, in_ch, kh, kw = kernel.shape
    n, c, h, w = x.shape
    if c != in_ch:
        raise ShapeError(f"conv2d channel mismatch: input has {c}, kernel expects {in_ch}")
    if bias.shape != (out_ch,):
        raise ShapeError(f"bias shape {bias.shape} does not match {out_ch} output channels")
    pad = _resolve_padding(p)
    if h + 2 * pad < kh or w + 2 * pad < kw:
        raise ShapeError(f"input {h}x{w} smaller than kernel {kh}x{kw} after padding {pad}")
    ho = (h + 2 * pad - kh) // s + 1
    wo = (w + 2 * pad - kw) // s + 1
    if ho < 1 or wo < 1:
        raise ShapeError(f"degenerate conv2d output {ho}x{wo}")

    xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x.data
    kd = kernel.data
    out = np.empty((n, out_ch, ho, wo))
    out[:] = bias.data[None, :, None, None]
    for u in range(kh):
        for v in range(kw):
            xs = xp[:, :, u:u + s * (ho - 1) + 1:s, v:v + s * (wo - 1) + 1:s]
            out += np.einsum("nchw,oc->nohw", xs, kd[:, :, u, v])

    def bwd(g: Array):
        gx = gk = gb = None
        if bias.requires_grad:
            gb = g.sum(axis=(0, 2, 3))
        if kernel.requires_grad:
            gk = np.zeros_like(kd)
            for u in range(kh):
                for v in range(kw):
                    xs = xp[:, :, u:u + s * (ho - 1) + 1:s, v:v + s * (wo - 1) + 1:s]
                    gk[:, :, u, v] = np.einsum("nohw,nchw->oc", g, xs)
        if x.requires_grad:
            gxp = np.zeros_like(xp)
            for u in range(kh):
                for v in range(kw):
                    gxp[:, :, u:u + s * (ho - 1) + 1:s, v:v + s * (wo - 1) + 1:s] += \
                        np.einsum("nohw,oc->nchw", g, kd[:, :, u, v])
            gx = gxp[:, :, pad:pad + h, pad:pad + w] if pad else gxp
        return gx, gk, gb

    return record_op("conv2d", (x, kernel, bias), out, bwd)


def transposed_conv2d(x: Tensor, p: Conv2dParams) -> Tensor:
    """Stride-s learned upsampling; the adjoint of conv2d with the same kernel.

    Kernel layout is [in_ch, out_ch, kh, kw]; output extent (H-1)*s + kh - 2*pad.
    """
    _require_nchw(x, "transposed_conv2d")
    kernel, bias, s = p.kernel, p.bias, p.stride
    in_ch, out_ch, kh, kw = kernel.shape
    n, c, h, w = x.shape
    if c != in_ch:
        raise ShapeError(f"transposed_conv2d channel mismatch: input has {c}, kernel expects {in_ch}")
    if bias.shape != (out_ch,):
        raise ShapeError(f"bias shape {bias.shape} does not match {out_ch} output channels")
    if p.padding == "same":
        raise ShapeError('transposed_conv2d requires an explicit integer padding, not "same"')
    pad = int(p.padding)
    hf = (h - 1) * s + kh
    wf = (w - 1) * s + kw
    ho, wo = hf - 2 * pad, wf - 2 * pad
    if ho < 1 or wo < 1:
        raise ShapeError(f"degenerate transposed_conv2d output {ho}x{wo}")

    kd = kernel.data
    full = np.zeros((n, out_ch, hf, wf))
    for u in range(kh):
        for v in range(kw):
            full[:, :, u:u + s * (h - 1) + 1:s, v:v + s * (w - 1) + 1:s] += \
                np.einsum("nihw,io->nohw", x.data, kd[:, :, u, v])
    out = full[:, :, pad:pad + ho, pad:pad + wo] if pad else full
    out = out + bias.data[None, :, None, None]

    def bwd(g: Array):
        gx = gk = gb = None
        if bias.requires_grad:
            gb = g.sum(axis=(0, 2, 3))
        gf = np.pad(g, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else g
        if x.requires_grad:
            gx = np.zeros_like(x.data)
            for u in range(kh):
                for v in range(kw):
                    gs = gf[:, :, u:u + s * (h - 1) + 1:s, v:v + s * (w - 1) + 1:s]
                    gx += np.einsum("nohw,io->nihw", gs, kd[:, :, u, v])
        if kernel.requires_grad:
            gk = np.zeros_like(kd)
            for u in range(kh):
                for v in range(kw):
                    gs = gf[:, :, u:u + s * (h - 1) + 1:s, v:v + s * (w - 1) + 1:s]
                    gk[:, :, u, v] = np.einsum("nihw,nohw->io", x.data, gs)
        return gx, gk, gb

    return record_op("transposed_conv2d", (x, kernel, bias), out, bwd)


def maxpool2d(x: Tensor, window: int = 2, stride: int = 2) -> Tensor:
    """Non-overlapping max pooling; grad routes to the first row-major argmax."""
    _require_nchw(x, "maxpool2d")
    if window != stride:
        raise ShapeError(f"maxpool2d supports window == stride only, got {window}/{stride}")
    n, c, h, w = x.shape
    if h % stride or w % stride:
        raise ShapeError(f"spatial extents {h}x{w} not divisible by stride {stride}")
    ho, wo = h // stride, w // stride
    win = x.data.reshape(n, c, ho, stride, wo, stride).transpose(0, 1, 2, 4, 3, 5)
    win = np.ascontiguousarray(win).reshape(n, c, ho, wo, stride * stride)
    idx = win.argmax(axis=-1)
    out = np.take_along_axis(win, idx[..., None], axis=-1)[..., 0]

    def bwd(g: Array):
        gwin = np.zeros((n, c, ho, wo, stride * stride))
        np.put_along_axis(gwin, idx[..., None], g[..., None], axis=-1)
        gx = gwin.reshape(n, c, ho, wo, stride, stride).transpose(0, 1, 2, 4, 3, 5)
        return (np.ascontiguousarray(gx).reshape(n, c, h, w),)

    return record_op("maxpool2d", (x,), out, bwd)


def global_avg_pool(x: Tensor) -> Tensor:
    """Per-sample, per-channel spatial mean: NCHW -> NC."""
    _require_nchw(x, "global_avg_pool")
    n, c, h, w = x.shape
    out = x.data.mean(axis=(2, 3))

    def bwd(g: Array):
        return (np.ascontiguousarray(np.broadcast_to(g[:, :, None, None] / (h * w), (n, c, h, w))),)

    return record_op("global_avg_pool", (x,), out, bwd)


def channel_max_pool(x: Tensor) -> Tensor:
    """Per-pixel max over channels: NCHW -> N1HW; grad to the first argmax."""
    _require_nchw(x, "channel_max_pool")
    idx = x.data.argmax(axis=1)
    out = np.take_along_axis(x.data, idx[:, None], axis=1)

    def bwd(g: Array):
        gx = np.zeros_like(x.data)
        np.put_along_axis(gx, idx[:, None], g, axis=1)
        return (gx,)

    return record_op("channel_max_pool", (x,), out, bwd)


def channel_avg_pool(x: Tensor) -> Tensor:
    """Per-pixel mean over channels: NCHW -> N1HW."""
    _require_nchw(x, "channel_avg_pool")
    c = x.shape[1]
    out = x.data.mean(axis=1, keepdims=True)

    def bwd(g: Array):
        return (np.ascontiguousarray(np.broadcast_to(g / c, x.shape)),)

    return record_op("channel_avg_pool", (x,), out, bwd)


def concat_channels(a: Tensor, b: Tensor) -> Tensor:
    """Stack a's channels before b's; batch and spatial extents must match."""
    _require_nchw(a, "concat_channels")
    _require_nchw(b, "concat_channels")
    if a.shape[0] != b.shape[0] or a.shape[2:] != b.shape[2:]:
        raise ShapeError(f"concat_channels mismatch: {a.shape} vs {b.shape}")
    ca = a.shape[1]
    out = np.concatenate([a.data, b.data], axis=1)

    def bwd(g: Array):
        return g[:, :ca], g[:, ca:]

    return record_op("concat_channels", (a, b), out, bwd)


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return record_op("relu", (x,), np.where(mask, x.data, 0.0), lambda g: (g * mask,))


def sigmoid(x: Tensor) -> Tensor:
    d = x.data
    out = np.empty_like(d)
    pos = d >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-d[pos]))
    e = np.exp(d[~pos])
    out[~pos] = e / (1.0 + e)
    return record_op("sigmoid", (x,), out, lambda g: (g * out * (1.0 - out),))


def softmax_channel(x: Tensor) -> Tensor:
    """Per-pixel softmax over the channel axis, max-subtracted for stability."""
    _require_nchw(x, "softmax_channel")
    z = x.data - x.data.max(axis=1, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=1, keepdims=True)

    def bwd(g: Array):
        return (out * (g - (out * g).sum(axis=1, keepdims=True)),)

    return record_op("softmax_channel", (x,), out, bwd)


def dropout(x: Tensor, rate: float, training: bool, rng: np.random.Generator | None = None) -> Tensor:
    """Inverted dropout: zero with prob ``rate``, scale survivors by 1/(1-rate)."""
    if not 0.0 <= rate < 1.0:
        raise ConfigError(f"dropout rate must lie in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return x
    if rng is None:
        raise ContractError("dropout in training mode requires an explicit rng")
    keep = rng.random(x.shape) >= rate
    s = 1.0 / (1.0 - rate)
    out = x.data * keep * s
    return record_op("dropout", (x,), out, lambda g: (g * keep * s,))
