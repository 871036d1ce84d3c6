"""Windowed attention building blocks: partitioning, channel self-correlation,
and the hierarchical-encoding transformer layer.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .encodings import WindowGeometry, encoding_plane
from .tensor import Tensor, TensorError


class Module:
    """Lightweight parameter container; collects Tensors recursively."""

    def named_params(self, prefix=""):
        out = {}
        for name, val in vars(self).items():
            if isinstance(val, Tensor) and val.requires_grad:
                out[prefix + name] = val
            elif isinstance(val, Module):
                out.update(val.named_params(prefix + name + "."))
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        out.update(item.named_params(f"{prefix}{name}.{i}."))
        return out

    def param_count(self):
        return sum(p.data.size for p in self.named_params().values())


def _uniform_init(rng, shape, fan_in):
    bound = 1.0 / np.sqrt(fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape).astype(np.float32),
                  requires_grad=True)


class Linear(Module):
    """Affine map on the last axis: (..., n_in) -> (..., n_out)."""

    def __init__(self, n_in, n_out, rng):
        self.weight = _uniform_init(rng, (n_in, n_out), n_in)
        self.bias = _uniform_init(rng, (n_out,), n_in)

    def __call__(self, x):
        lead = x.shape[:-1]
        flat = T.reshape(x, (-1, x.shape[-1]))
        out = T.matmul(flat, self.weight) + self.bias
        return T.reshape(out, lead + (self.weight.shape[1],))


class LayerNorm(Module):
    """Normalize the last (channel) axis, then apply a learned affine."""

    def __init__(self, n, rng=None, eps=1e-5):
        del rng  # affine init is deterministic
        self.gamma = Tensor(np.ones(n, dtype=np.float32), requires_grad=True)
        self.beta = Tensor(np.zeros(n, dtype=np.float32), requires_grad=True)
        self.eps = eps

    def __call__(self, x):
        return layer_norm(x, self.gamma, self.beta, self.eps)


def layer_norm(x, gamma, beta, eps=1e-5):
    mu = T.mean(x, axis=-1, keepdims=True)
    centered = x - mu
    var = T.mean(T.square(centered), axis=-1, keepdims=True)
    return centered / T.sqrt(var + eps) * gamma + beta


@dataclass(frozen=True)
class WindowPartition:
    """Bookkeeping to invert a window partition exactly."""

    batch: int
    H: int
    W: int
    h: int
    w: int
    pad_bottom: int
    pad_right: int
    n_h: int
    n_w: int
    squeeze: bool


def window_partition(x, g: WindowGeometry):
    """Split (B, H, W, C) into non-overlapping windows: (B*n, h*w, C).

    Indivisible extents are zero-padded on the bottom/right; the metadata
    records everything needed to crop the padding back off.
    """
    squeeze = len(x.shape) == 3
    if squeeze:
        x = T.reshape(x, (1,) + x.shape)
    B, H, W, C = x.shape
    pad_b = (-H) % g.h
    pad_r = (-W) % g.w
    if pad_b or pad_r:
        x = T.pad_hw(x, pad_b, pad_r, h_axis=1)
    n_h, n_w = (H + pad_b) // g.h, (W + pad_r) // g.w
    t = T.reshape(x, (B, n_h, g.h, n_w, g.w, C))
    t = T.transpose(t, (0, 1, 3, 2, 4, 5))
    wins = T.reshape(t, (B * n_h * n_w, g.h * g.w, C))
    meta = WindowPartition(B, H, W, g.h, g.w, pad_b, pad_r, n_h, n_w, squeeze)
    return wins, meta


def window_reverse(wins, meta: WindowPartition):
    """Exact inverse of :func:`window_partition` (padding cropped)."""
    B, n_h, n_w, h, w = meta.batch, meta.n_h, meta.n_w, meta.h, meta.w
    expected = B * n_h * n_w
    if wins.shape[0] != expected or wins.shape[1] != h * w:
        raise TensorError(
            f"window_reverse: windows {wins.shape} inconsistent with metadata")
    C = wins.shape[2]
    t = T.reshape(wins, (B, n_h, n_w, h, w, C))
    t = T.transpose(t, (0, 1, 3, 2, 4, 5))
    t = T.reshape(t, (B, n_h * h, n_w * w, C))
    if meta.pad_bottom or meta.pad_right:
        t = T.narrow(t, 1, 0, meta.H)
        t = T.narrow(t, 2, 0, meta.W)
    if meta.squeeze:
        t = T.reshape(t, (meta.H, meta.W, C))
    return t


def csc(q, v, h, w):
    """Channel self-correlation within a window: ((Q^T V / hw) V^T)^T.

    q, v: (n, hw, C/2) or (hw, C/2). Output has the input shape. Linear in
    window area for fixed channel count.
    """
    if q.shape != v.shape:
        raise TensorError(f"csc shape mismatch: {q.shape} vs {v.shape}")
    squeeze = len(q.shape) == 2
    if squeeze:
        q = T.reshape(q, (1,) + q.shape)
        v = T.reshape(v, (1,) + v.shape)
    qt = T.transpose(q, (0, 2, 1))
    corr = T.matmul(qt, v) * (1.0 / (h * w))          # (n, C/2, C/2)
    out = T.matmul(corr, T.transpose(v, (0, 2, 1)))   # (n, C/2, hw)
    out = T.transpose(out, (0, 2, 1))
    if squeeze:
        out = T.reshape(out, out.shape[1:])
    return out


class HiETLayer(Module):
    """One hierarchical-encoding transformer layer.

    Pipeline: concat the window-half code plane with the input and embed via a
    single linear + GELU; partition into windows; split channels into Q/V;
    channel self-correlation; un-partition; linear + LayerNorm back to C
    channels; residual add; pre-norm FFN residual.
    """

    def __init__(self, channels, window, rng, ffn_ratio=2, use_hier_encoding=True):
        if channels % 2:
            raise ValueError("channel count must be even")
        self.channels = channels
        self.window = tuple(window)        # (w, h)
        self.use_hier_encoding = use_hier_encoding
        c = channels
        n_embed_in = c + 2 if use_hier_encoding else c
        self.embed = Linear(n_embed_in, c, rng)
        self.out_linear = Linear(c // 2, c, rng)
        self.out_norm = LayerNorm(c)
        self.ffn_norm = LayerNorm(c)
        hidden = ffn_ratio * c
        self.ffn1 = Linear(c, hidden, rng)
        self.ffn2 = Linear(hidden, c, rng)

    def geometry(self, H, W):
        w, h = self.window
        return WindowGeometry(w=min(w, W), h=min(h, H), W=W, H=H)

    def __call__(self, x):
        H, W = x.shape[-3], x.shape[-2]
        g = self.geometry(H, W)
        if self.use_hier_encoding:
            plane = T.constant(encoding_plane(g))
            if len(x.shape) == 4:
                plane = T.constant(
                    np.broadcast_to(plane.data, (x.shape[0],) + plane.data.shape))
            f0 = self.embed(T.concat([x, plane], axis=-1))
        else:
            f0 = self.embed(x)
        f0 = T.gelu(f0)
        wins, meta = window_partition(f0, g)
        half = self.channels // 2
        q = T.narrow(wins, -1, 0, half)
        v = T.narrow(wins, -1, half, half)
        f1 = csc(q, v, g.h, g.w)
        f3 = window_reverse(f1, meta)
        f4 = self.out_norm(self.out_linear(f3))
        y = x + f4
        return y + self.ffn2(T.gelu(self.ffn1(self.ffn_norm(y))))
