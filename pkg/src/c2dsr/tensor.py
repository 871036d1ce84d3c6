"""Minimal dense float32 tensor with reverse-mode automatic differentiation.

Everything the network needs is built from the primitives here: broadcasted
arithmetic, (batched) matmul, shape ops, reductions, a couple of nonlinearities,
zero-padding, row gathering, conv2d and pixel shuffle. Reductions accumulate in
float64 and cast back to float32 so results are deterministic across runs.

Layout convention: feature maps are channels-last, (H, W, C) or (B, H, W, C).
"""

from __future__ import annotations

import numpy as np
from scipy.special import erf

_INV_SQRT2 = 0.7071067811865476
_INV_SQRT2PI = 0.3989422804014327

# When enabled, every op asserts its result is finite. Cheap enough for tests
# and desk-scale training, off by default for tight loops.
FINITE_CHECKS = False

# Working precision. float32 is the production setting; gradient checks flip
# to float64 so central differences at h=1e-3 are not noise-limited.
_DTYPE = np.float32


def default_dtype():
    return _DTYPE


def set_default_dtype(dtype):
    global _DTYPE
    if dtype not in (np.float32, np.float64):
        raise ValueError("dtype must be float32 or float64")
    _DTYPE = dtype


class precision(object):
    """Context manager: with precision(np.float64): ..."""

    def __init__(self, dtype):
        self.dtype = dtype

    def __enter__(self):
        self.saved = _DTYPE
        set_default_dtype(self.dtype)

    def __exit__(self, *exc):
        set_default_dtype(self.saved)


class TensorError(ValueError):
    """Shape/contract violation in a tensor op."""


def _check_finite(arr, opname):
    if FINITE_CHECKS and not np.all(np.isfinite(arr)):
        raise TensorError(f"non-finite values produced by {opname}")


class Tensor:
    """A dense float32 array plus an optional gradient buffer.

    Non-leaf tensors remember their parents and a closure that scatters the
    incoming gradient; ``backward`` walks the graph in reverse topological
    order.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward_fn")

    def __init__(self, data, requires_grad=False):
        self.data = np.asarray(data, dtype=_DTYPE)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward_fn = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def zero_grad(self):
        self.grad = None

    def detach(self):
        return Tensor(self.data.copy())

    def item(self):
        if self.data.size != 1:
            raise TensorError("item() requires a single-element tensor")
        return float(self.data.reshape(()))

    def backward(self):
        """Populate ``grad`` on every reachable tensor with requires_grad."""
        if self.data.size != 1:
            raise TensorError("backward() requires a scalar loss")
        if not np.all(np.isfinite(self.data)):
            raise TensorError("backward() called on a non-finite loss")
        order = _toposort(self)
        self.grad = np.ones_like(self.data)
        for node in order:
            if node._backward_fn is not None and node.grad is not None:
                node._backward_fn(node.grad)
        return self

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def _toposort(root):
    order = []
    seen = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order[::-1]


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def constant(data):
    """A no-grad tensor wrapping ``data`` (no copy if already float32)."""
    return Tensor(data)


def _make(data, parents, backward_fn, opname):
    _check_finite(data, opname)
    out = Tensor(data)
    out.requires_grad = any(p.requires_grad for p in parents)
    if out.requires_grad:
        out._parents = tuple(parents)
        out._backward_fn = backward_fn
    return out


def _accum(t, g):
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def _unbroadcast(g, shape):
    """Sum ``g`` down to ``shape`` (inverse of numpy broadcasting)."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)), dtype=np.float64)
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True, dtype=np.float64)
    return g.astype(_DTYPE, copy=False)


# ---------------------------------------------------------------------------
# elementwise arithmetic

def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    data = a.data + b.data

    def bwd(g):
        _accum(a, _unbroadcast(g, a.data.shape))
        _accum(b, _unbroadcast(g, b.data.shape))

    return _make(data, (a, b), bwd, "add")


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    data = a.data - b.data

    def bwd(g):
        _accum(a, _unbroadcast(g, a.data.shape))
        _accum(b, _unbroadcast(-g, b.data.shape))

    return _make(data, (a, b), bwd, "sub")


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    data = a.data * b.data

    def bwd(g):
        _accum(a, _unbroadcast(g * b.data, a.data.shape))
        _accum(b, _unbroadcast(g * a.data, b.data.shape))

    return _make(data, (a, b), bwd, "mul")


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    data = a.data / b.data

    def bwd(g):
        _accum(a, _unbroadcast(g / b.data, a.data.shape))
        _accum(b, _unbroadcast(-g * a.data / (b.data * b.data), b.data.shape))

    return _make(data, (a, b), bwd, "div")


def square(a):
    a = as_tensor(a)

    def bwd(g):
        _accum(a, g * (2.0 * a.data))

    return _make(a.data * a.data, (a,), bwd, "square")


def sqrt(a):
    a = as_tensor(a)
    data = np.sqrt(a.data)

    def bwd(g):
        _accum(a, g * (0.5 / data))

    return _make(data, (a,), bwd, "sqrt")


def abs_(a):
    a = as_tensor(a)

    def bwd(g):
        _accum(a, g * np.sign(a.data))

    return _make(np.abs(a.data), (a,), bwd, "abs")


def gelu(a):
    """Exact (erf-based) GELU."""
    a = as_tensor(a)
    x = a.data
    cdf = 0.5 * (1.0 + erf(x * _INV_SQRT2))
    data = (x * cdf).astype(_DTYPE)

    def bwd(g):
        pdf = _INV_SQRT2PI * np.exp(-0.5 * x * x)
        _accum(a, (g * (cdf + x * pdf)).astype(_DTYPE))

    return _make(data, (a,), bwd, "gelu")


def elu_plus_one(a):
    """elu(x) + 1: the positive feature map used by kernelized linear attention."""
    a = as_tensor(a)
    x = a.data
    neg = np.exp(np.minimum(x, 0.0))
    data = np.where(x > 0.0, x + 1.0, neg).astype(_DTYPE)

    def bwd(g):
        _accum(a, (g * np.where(x > 0.0, 1.0, neg)).astype(_DTYPE))

    return _make(data, (a,), bwd, "elu_plus_one")


# ---------------------------------------------------------------------------
# matmul

def matmul(a, b):
    """Matrix product. Supports 2-D x 2-D, batched (..., M, K) x (..., K, N)
    with identical leading dims, and (..., M, K) x (K, N) with a shared rhs."""
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise TensorError("matmul operands must have rank >= 2")
    if a.data.shape[-1] != b.data.shape[-2]:
        raise TensorError(
            f"matmul inner dims disagree: {a.data.shape} x {b.data.shape}")
    data = np.matmul(a.data, b.data)

    def bwd(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        _accum(a, _unbroadcast(ga, a.data.shape))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        _accum(b, _unbroadcast(gb, b.data.shape))

    return _make(data, (a, b), bwd, "matmul")


# ---------------------------------------------------------------------------
# shape ops

def reshape(a, shape):
    a = as_tensor(a)
    old = a.data.shape

    def bwd(g):
        _accum(a, g.reshape(old))

    return _make(a.data.reshape(shape), (a,), bwd, "reshape")


def transpose(a, axes):
    a = as_tensor(a)
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))

    def bwd(g):
        _accum(a, g.transpose(inv))

    return _make(a.data.transpose(axes), (a,), bwd, "transpose")


def concat(tensors, axis=-1):
    tensors = [as_tensor(t) for t in tensors]
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def bwd(g):
        for t, piece in zip(tensors, np.split(g, splits, axis=axis)):
            _accum(t, piece)

    return _make(data, tensors, bwd, "concat")


def narrow(a, axis, start, length):
    """Slice ``length`` entries starting at ``start`` along ``axis``."""
    a = as_tensor(a)
    idx = [slice(None)] * a.data.ndim
    idx[axis] = slice(start, start + length)
    idx = tuple(idx)

    def bwd(g):
        full = np.zeros_like(a.data)
        full[idx] = g
        _accum(a, full)

    return _make(a.data[idx], (a,), bwd, "narrow")


def pad_hw(a, pad_bottom, pad_right, h_axis):
    """Zero-pad the two spatial axes (h_axis, h_axis+1) on the bottom/right."""
    a = as_tensor(a)
    pads = [(0, 0)] * a.data.ndim
    pads[h_axis] = (0, pad_bottom)
    pads[h_axis + 1] = (0, pad_right)
    H, W = a.data.shape[h_axis], a.data.shape[h_axis + 1]

    def bwd(g):
        idx = [slice(None)] * g.ndim
        idx[h_axis] = slice(0, H)
        idx[h_axis + 1] = slice(0, W)
        _accum(a, g[tuple(idx)])

    return _make(np.pad(a.data, pads), (a,), bwd, "pad_hw")


# ---------------------------------------------------------------------------
# reductions (float64 accumulators, cast back to float32)

def sum_(a, axis=None, keepdims=False):
    a = as_tensor(a)
    data = a.data.sum(axis=axis, keepdims=keepdims, dtype=np.float64)
    data = np.asarray(data, dtype=_DTYPE)

    def bwd(g):
        if axis is None:
            _accum(a, np.broadcast_to(g.reshape(()), a.data.shape).copy())
            return
        gg = g
        if not keepdims:
            gg = np.expand_dims(gg, axis)
        _accum(a, np.broadcast_to(gg, a.data.shape).copy())

    return _make(data, (a,), bwd, "sum")


def mean(a, axis=None, keepdims=False):
    a = as_tensor(a)
    if axis is None:
        n = a.data.size
    else:
        n = a.data.shape[axis]
    return mul(sum_(a, axis=axis, keepdims=keepdims), 1.0 / n)


# ---------------------------------------------------------------------------
# gather

def gather_rows(a, idx):
    """Gather rows of a (B, M, C) tensor: idx (B, N) int -> (B, N, C)."""
    a = as_tensor(a)
    idx = np.asarray(idx)
    if a.data.ndim != 3 or idx.ndim != 2 or idx.shape[0] != a.data.shape[0]:
        raise TensorError("gather_rows expects x:(B,M,C) and idx:(B,N)")
    batch = np.arange(a.data.shape[0])[:, None]
    data = a.data[batch, idx]

    def bwd(g):
        full = np.zeros_like(a.data)
        np.add.at(full, (batch, idx), g)
        _accum(a, full)

    return _make(data, (a,), bwd, "gather_rows")


# ---------------------------------------------------------------------------
# conv2d (channels-last, stride 1, same-size output for padding = k // 2)

def conv2d(x, w, b=None, padding=None):
    """Cross-correlation of x:(..., H, W, Cin) with w:(Cout, Cin, k, k).

    Stride 1; ``padding`` defaults to k // 2 (same-size output for odd k).
    """
    x, w = as_tensor(x), as_tensor(w)
    squeeze = x.data.ndim == 3
    xd = x.data[None] if squeeze else x.data
    if xd.ndim != 4:
        raise TensorError("conv2d expects (H,W,C) or (B,H,W,C) input")
    cout, cin, kh, kw = w.data.shape
    if kh != kw or kh not in (1, 3):
        raise TensorError("conv2d supports square kernels of size 1 or 3")
    if xd.shape[-1] != cin:
        raise TensorError(
            f"conv2d channel mismatch: input {xd.shape[-1]} vs weight {cin}")
    if padding is None:
        padding = kh // 2
    B, H, W, _ = xd.shape
    xp = np.pad(xd, ((0, 0), (padding, padding), (padding, padding), (0, 0)))
    Ho, Wo = H + 2 * padding - kh + 1, W + 2 * padding - kw + 1

    # im2col: (B*Ho*Wo, kh*kw*cin)
    cols = np.empty((B, Ho, Wo, kh, kw, cin), dtype=_DTYPE)
    for dy in range(kh):
        for dx in range(kw):
            cols[:, :, :, dy, dx, :] = xp[:, dy:dy + Ho, dx:dx + Wo, :]
    cols2 = cols.reshape(B * Ho * Wo, kh * kw * cin)
    wmat = w.data.transpose(2, 3, 1, 0).reshape(kh * kw * cin, cout)
    out = (cols2 @ wmat).reshape(B, Ho, Wo, cout)
    if b is not None:
        b = as_tensor(b)
        out = out + b.data
    data = out[0] if squeeze else out

    def bwd(g):
        gg = g[None] if squeeze else g
        gcols = gg.reshape(B * Ho * Wo, cout)
        gw = (cols2.T @ gcols).reshape(kh, kw, cin, cout).transpose(3, 2, 0, 1)
        _accum(w, gw)
        if b is not None:
            _accum(b, gcols.sum(axis=0, dtype=np.float64).astype(_DTYPE))
        gc = (gcols @ wmat.T).reshape(B, Ho, Wo, kh, kw, cin)
        gxp = np.zeros_like(xp)
        for dy in range(kh):
            for dx in range(kw):
                gxp[:, dy:dy + Ho, dx:dx + Wo, :] += gc[:, :, :, dy, dx, :]
        gx = gxp[:, padding:padding + H, padding:padding + W, :]
        _accum(x, gx[0] if squeeze else gx)

    parents = (x, w) if b is None else (x, w, b)
    return _make(data, parents, bwd, "conv2d")


# ---------------------------------------------------------------------------
# pixel shuffle (depth-to-space), channels-last

def pixel_shuffle(x, r):
    """(..., H, W, C*r*r) -> (..., r*H, r*W, C).

    Channel index c*r*r + dy*r + dx maps to output offset (dy, dx) of cell c.
    """
    x = as_tensor(x)
    if x.data.shape[-1] % (r * r) != 0:
        raise TensorError(
            f"pixel_shuffle: {x.data.shape[-1]} channels not divisible by r^2={r * r}")
    squeeze = x.data.ndim == 3
    t = x if not squeeze else reshape(x, (1,) + x.data.shape)
    B, H, W, C = t.data.shape
    c_out = C // (r * r)
    t = reshape(t, (B, H, W, c_out, r, r))
    t = transpose(t, (0, 1, 4, 2, 5, 3))          # (B, H, dy, W, dx, c)
    t = reshape(t, (B, H * r, W * r, c_out))
    if squeeze:
        t = reshape(t, (H * r, W * r, c_out))
    return t


def pixel_unshuffle(x, r):
    """Exact inverse of :func:`pixel_shuffle`."""
    x = as_tensor(x)
    squeeze = x.data.ndim == 3
    t = x if not squeeze else reshape(x, (1,) + x.data.shape)
    B, Hr, Wr, c = t.data.shape
    if Hr % r or Wr % r:
        raise TensorError("pixel_unshuffle: extents not divisible by r")
    H, W = Hr // r, Wr // r
    t = reshape(t, (B, H, r, W, r, c))
    t = transpose(t, (0, 1, 3, 5, 2, 4))          # (B, H, W, c, dy, dx)
    t = reshape(t, (B, H, W, c * r * r))
    if squeeze:
        t = reshape(t, (H, W, c * r * r))
    return t
