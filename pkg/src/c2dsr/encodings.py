"""Hierarchical positional encodings, cell decoding and query-coordinate grids.

Two binary codes are used: a window-relative code over the feature grid
(which half of its window a feature index falls in, per axis) and a level-j
code of the local coordinate of a high-resolution query inside its nearest
low-resolution feature cell.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class WindowGeometry:
    """Window extents (w, h) over a feature map of extents (W, H)."""

    w: int
    h: int
    W: int
    H: int

    def __post_init__(self):
        if not (1 <= self.w and 1 <= self.h and self.W >= 1 and self.H >= 1):
            raise ValueError("window and map extents must be >= 1")


@dataclass(frozen=True)
class QueryCoord:
    """Local coordinate of an HR query inside its LR cell, plus the level."""

    x_local: float
    y_local: float
    j: int = 0

    def __post_init__(self):
        if not (0.0 <= self.x_local < 1.0 and 0.0 <= self.y_local < 1.0):
            raise ValueError("local coordinates must lie in [0, 1)")
        if self.j not in (0, 1):
            raise ValueError("only hierarchy levels 0 and 1 are supported")


def window_hier_encoding(g: WindowGeometry, u: int, v: int):
    """Binary code of feature index (u, v): which half of its window per axis.

    Computed as (floor(2u / w) mod 2, floor(2v / h) mod 2) with exact integer
    arithmetic.
    """
    if not (0 <= u < g.W and 0 <= v < g.H):
        raise ValueError(f"index ({u}, {v}) outside map {g.W}x{g.H}")
    return (2 * u // g.w) % 2, (2 * v // g.h) % 2


def encoding_plane(g: WindowGeometry) -> np.ndarray:
    """Stack window_hier_encoding over the whole map: (H, W, 2) float32 in {0,1}."""
    u = np.arange(g.W)
    v = np.arange(g.H)
    bu = (2 * u // g.w) % 2
    bv = (2 * v // g.h) % 2
    plane = np.empty((g.H, g.W, 2), dtype=np.float32)
    plane[:, :, 0] = bu[None, :]
    plane[:, :, 1] = bv[:, None]
    return plane


def coord_hier_encoding(q: QueryCoord):
    """Level-j binary code of a local coordinate: floor(x * 2^(j+1)) mod 2."""
    scale = 2 ** (q.j + 1)
    return int(q.x_local * scale) % 2, int(q.y_local * scale) % 2


def coord_hier_bits(coords: np.ndarray, j: int) -> np.ndarray:
    """Vectorized coord_hier_encoding over (..., 2) local coordinates."""
    scale = 2 ** (j + 1)
    return (np.floor(coords * scale) % 2).astype(np.float32)


def cell_vector(s: float, H: int, W: int) -> np.ndarray:
    """Query-pixel footprint fed to the implicit decoder: [2/(sH), 2/(sW)]."""
    if H < 1 or W < 1:
        raise ValueError("feature extents must be positive")
    if s <= 0:
        raise ValueError("scale must be positive")
    return np.array([2.0 / (s * H), 2.0 / (s * W)], dtype=np.float32)


def query_layout(h: int, w: int, sh: int, sw: int):
    """Map every pixel of an sh x sw output grid onto an h x w feature grid.

    Pixel centers sit at (i + 0.5) / n in both grids. Returns
    (local (sh, sw, 2) float32 in [0,1) ordered (y, x), nearest-cell index
    (sh, sw, 2) int ordered (row, col)).
    """
    gy = (np.arange(sh) + 0.5) / sh * h
    gx = (np.arange(sw) + 0.5) / sw * w
    ry = np.minimum(np.floor(gy).astype(np.int64), h - 1)
    rx = np.minimum(np.floor(gx).astype(np.int64), w - 1)
    ly = (gy - ry).astype(np.float32)
    lx = (gx - rx).astype(np.float32)
    local = np.empty((sh, sw, 2), dtype=np.float32)
    local[:, :, 0] = ly[:, None]
    local[:, :, 1] = lx[None, :]
    idx = np.empty((sh, sw, 2), dtype=np.int64)
    idx[:, :, 0] = ry[:, None]
    idx[:, :, 1] = rx[None, :]
    # guard the open upper bound against float rounding
    np.clip(local, 0.0, np.nextafter(1.0, 0.0, dtype=np.float32), out=local)
    return local, idx


def local_coord_grid(s: float, H: int, W: int):
    """Query layout for up-scaling an H x W feature map by real factor s >= 1."""
    if s < 1:
        raise ValueError("scale must be >= 1")
    sh, sw = int(s * H), int(s * W)
    return query_layout(H, W, sh, sw)
