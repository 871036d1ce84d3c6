"""Full super-resolution network: shallow conv front-end, stacked HiET blocks,
and either a continuous implicit upsampler or a discrete sub-pixel upsampler.
Also the analytic parameter/FLOP accounting used by the complexity command.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import tensor as T
from .blocks import HiETBlock, build_window_schedule
from .encodings import cell_vector, coord_hier_bits, local_coord_grid, query_layout
from .layers import Linear, Module
from .tensor import Tensor

CONTINUOUS = "continuous"
DISCRETE = "discrete"


@dataclass(frozen=True)
class ModelConfig:
    """Architecture description shared by both training stages."""

    channels: int = 16
    blocks: int = 1
    schedule: tuple = (16, 8, 4, 4, 8, 16)
    ffn_ratio: int = 2
    upsampler: str = DISCRETE
    scale: float = 2
    use_hier_encoding: bool = True
    use_unet: bool = True
    block_residual: bool = True
    long_residual: bool = True
    mha_heads: int = 1

    def __post_init__(self):
        if self.blocks < 1:
            raise ValueError("need at least one block")
        if self.channels % 2:
            raise ValueError("channel count must be even")
        if self.upsampler not in (CONTINUOUS, DISCRETE):
            raise ValueError(f"unknown upsampler kind {self.upsampler!r}")
        if self.upsampler == DISCRETE:
            if self.scale not in (1, 2, 3, 4):
                raise ValueError("discrete scale must be an integer in 1..4")
        elif not 1 <= self.scale <= 4:
            raise ValueError("continuous scale must lie in [1, 4]")

    def backbone_fields(self):
        """Fields that must agree for stage-1 -> stage-2 weight transfer."""
        return (self.channels, self.blocks, tuple(self.schedule), self.ffn_ratio,
                self.use_hier_encoding, self.use_unet, self.block_residual,
                self.long_residual)


# Full-scale presets sized to land on the published complexity figures.
PRESETS = {
    "desk": ModelConfig(channels=16, blocks=1, schedule=(16, 8, 4, 4, 8, 16),
                        upsampler=DISCRETE, scale=2),
    "swinir-c2d-x4": ModelConfig(channels=68, blocks=4,
                                 schedule=(64, 32, 8, 8, 32, 64),
                                 upsampler=DISCRETE, scale=4),
    "srformer-c2d-x4": ModelConfig(channels=70, blocks=4,
                                   schedule=(64, 32, 8, 8, 32, 64),
                                   upsampler=DISCRETE, scale=4),
}


class PixelShuffleUpsampler(Module):
    """Sub-pixel convolution: 3x3 conv to 3*s^2 channels, then depth-to-space."""

    def __init__(self, channels, scale, rng):
        if int(scale) != scale:
            raise ValueError("discrete upsampler needs an integer scale")
        self.scale = int(scale)
        cout = 3 * self.scale * self.scale
        # Output head starts near mid-gray: small weights, 0.5 bias. A fresh
        # head is also attached to a *pretrained* backbone whose feature
        # magnitudes are much larger than at random init; a fan-in-scaled
        # init then emits values far outside [0, 1] and the recovery wrecks
        # the transferred features before learning can begin.
        bound = 0.1 / math.sqrt(channels * 9)
        self.weight = Tensor(
            rng.uniform(-bound, bound, size=(cout, channels, 3, 3)).astype(np.float32),
            requires_grad=True)
        self.bias = Tensor(
            np.full((cout,), 0.5, dtype=np.float32), requires_grad=True)

    def __call__(self, feats):
        out = T.conv2d(feats, self.weight, self.bias)
        return T.pixel_shuffle(out, self.scale)


class LinearAttention(Module):
    """Single-head kernelized linear attention over a token axis.

    Uses the positive feature map elu(x)+1; cost is linear in token count.
    """

    def __init__(self, dim, rng):
        self.q = Linear(dim, dim, rng)
        self.k = Linear(dim, dim, rng)
        self.v = Linear(dim, dim, rng)
        self.out = Linear(dim, dim, rng)

    def __call__(self, x):
        # x: (B, N, dim)
        phi_q = T.elu_plus_one(self.q(x))
        phi_k = T.elu_plus_one(self.k(x))
        val = self.v(x)
        kv = T.matmul(T.transpose(phi_k, (0, 2, 1)), val)       # (B, dim, dim)
        num = T.matmul(phi_q, kv)                               # (B, N, dim)
        ksum = T.sum_(phi_k, axis=1, keepdims=True)             # (B, 1, dim)
        den = T.sum_(phi_q * ksum, axis=-1, keepdims=True)      # (B, N, 1)
        return self.out(num / (den + 1e-6))


class HiifLUpsampler(Module):
    """Lightweight implicit image function: three MLPs + linear attention.

    Per query: gather the nearest LR feature, append the level-0 coordinate
    code and the cell vector, embed, refine with linear attention, append the
    level-1 code, embed again, and project to RGB.
    """

    def __init__(self, channels, rng):
        self.channels = channels
        self.mlp1 = Linear(channels + 4, channels, rng)
        self.attn = LinearAttention(channels, rng)
        self.mlp2 = Linear(channels + 2, channels, rng)
        self.mlp3 = Linear(channels, 3, rng)

    def query(self, feats, flat_idx, local, cell):
        """feats (B, H*W, C); flat_idx (B, N) int; local (B, N, 2); cell (B, 2)."""
        B, N = flat_idx.shape
        gathered = T.gather_rows(feats, flat_idx)
        bits0 = T.constant(coord_hier_bits(local, 0))
        cell_t = T.constant(np.broadcast_to(cell[:, None, :], (B, N, 2)).copy())
        z = T.gelu(self.mlp1(T.concat([gathered, bits0, cell_t], axis=-1)))
        z0 = self.attn(z)
        bits1 = T.constant(coord_hier_bits(local, 1))
        z1 = T.gelu(self.mlp2(T.concat([z0, bits1], axis=-1)))
        return self.mlp3(z1)


class SRModel(Module):
    """f_S (shallow conv) + f_D (HiET blocks, trailing conv, long residual)
    + upsampler, for either training stage."""

    def __init__(self, cfg: ModelConfig, rng=None):
        if rng is None:
            rng = np.random.default_rng(0)
        self.cfg = cfg
        c = cfg.channels
        bound = 1.0 / math.sqrt(3 * 9)
        self.shallow_weight = Tensor(
            rng.uniform(-bound, bound, size=(c, 3, 3, 3)).astype(np.float32),
            requires_grad=True)
        self.shallow_bias = Tensor(
            rng.uniform(-bound, bound, size=(c,)).astype(np.float32),
            requires_grad=True)
        schedule = build_window_schedule(cfg.schedule)
        self.blocks = [HiETBlock(c, schedule, rng, cfg.ffn_ratio,
                                 cfg.use_hier_encoding, cfg.use_unet,
                                 cfg.block_residual)
                       for _ in range(cfg.blocks)]
        bound = 1.0 / math.sqrt(c * 9)
        self.deep_weight = Tensor(
            rng.uniform(-bound, bound, size=(c, c, 3, 3)).astype(np.float32),
            requires_grad=True)
        self.deep_bias = Tensor(
            rng.uniform(-bound, bound, size=(c,)).astype(np.float32),
            requires_grad=True)
        if cfg.upsampler == DISCRETE:
            self.upsampler = PixelShuffleUpsampler(c, cfg.scale, rng)
        else:
            self.upsampler = HiifLUpsampler(c, rng)

    # -- feature extraction ------------------------------------------------
    def shallow_extract(self, img):
        if img.shape[-1] != 3:
            raise T.TensorError("expected a 3-channel image")
        return T.conv2d(img, self.shallow_weight, self.shallow_bias)

    def deep_extract(self, fs):
        cur = fs
        for block in self.blocks:
            cur = block(cur)
        fd = T.conv2d(cur, self.deep_weight, self.deep_bias)
        return fd + fs if self.cfg.long_residual else fd

    def features(self, img):
        return self.deep_extract(self.shallow_extract(img))

    # -- inference ---------------------------------------------------------
    def __call__(self, img):
        """Super-resolve (B?, H, W, 3) at the configured scale."""
        fd = self.features(img)
        if self.cfg.upsampler == DISCRETE:
            return self.upsampler(fd)
        return self.hiifl_upsample(fd, self.cfg.scale)

    def hiifl_upsample(self, fd, s):
        """Continuous upsampling of feature maps fd to floor(s*H) x floor(s*W)."""
        if not 1 <= s <= 4:
            raise ValueError("continuous scale must lie in [1, 4]")
        squeeze = len(fd.shape) == 3
        if squeeze:
            fd = T.reshape(fd, (1,) + fd.shape)
        B, H, W, C = fd.shape
        local, idx = local_coord_grid(s, H, W)
        sh, sw = local.shape[:2]
        flat_idx = (idx[:, :, 0] * W + idx[:, :, 1]).reshape(1, -1)
        flat_idx = np.broadcast_to(flat_idx, (B, sh * sw))
        local_b = np.broadcast_to(local.reshape(1, -1, 2), (B, sh * sw, 2)).copy()
        cell = np.broadcast_to(cell_vector(s, H, W)[None], (B, 2)).copy()
        feats = T.reshape(fd, (B, H * W, C))
        rgb = self.upsampler.query(feats, flat_idx, local_b, cell)
        out = T.reshape(rgb, (B, sh, sw, 3))
        if squeeze:
            out = T.reshape(out, (sh, sw, 3))
        return out

    def query_rgb(self, fd, flat_idx, local, cell):
        """Predict RGB at sampled queries (stage-1 training path)."""
        B, H, W, C = fd.shape
        feats = T.reshape(fd, (B, H * W, C))
        return self.upsampler.query(feats, flat_idx, local, cell)


# ---------------------------------------------------------------------------
# complexity accounting

def count_params(cfg: ModelConfig, per_module=False):
    """Exact learnable-scalar count, from an instantiated model."""
    params = SRModel(cfg, np.random.default_rng(0)).named_params()
    if not per_module:
        return sum(p.data.size for p in params.values())
    groups = {}
    for name, p in params.items():
        top = name.split(".", 1)[0].split("_")[0]
        if top in ("shallow", "deep"):
            key = top
        elif top == "blocks":
            key = "blocks"
        else:
            key = "upsampler"
        groups[key] = groups.get(key, 0) + p.data.size
    return groups


def _padded_pixels(H, W, wh):
    w, h = wh
    w, h = min(w, W), min(h, H)
    return (math.ceil(H / h) * h) * (math.ceil(W / w) * w)


def count_flops(cfg: ModelConfig, out_hw):
    """Analytic multiply-accumulate count at the given output resolution.

    One FLOP per multiply-add (the convention of the lightweight-SR tables
    this reproduces); norms, activations and elementwise adds are ignored.
    """
    out_h, out_w = out_hw
    s = cfg.scale
    H, W = math.ceil(out_h / s), math.ceil(out_w / s)
    c = cfg.channels
    n = H * W
    total = 0
    total += 9 * 3 * c * n                       # shallow 3x3 conv
    schedule = build_window_schedule(cfg.schedule, patch=(H, W))
    sizes = schedule.all_sizes
    for wh in sizes:
        layer = 0
        embed_in = c + 2 if cfg.use_hier_encoding else c
        layer += embed_in * c * n                # embedding linear
        layer += 2 * (c // 2) ** 2 * _padded_pixels(H, W, wh)   # CSC matmuls
        layer += (c // 2) * c * n                # channel-restore linear
        layer += 2 * cfg.ffn_ratio * c * c * n   # FFN
        total += layer * cfg.blocks
    if cfg.use_unet:
        total += len(schedule.decoder_sizes) * 2 * c * c * n * cfg.blocks
    total += 9 * c * c * n                       # trailing 3x3 conv
    if cfg.upsampler == DISCRETE:
        r = int(s)
        total += 9 * c * 3 * r * r * n           # sub-pixel conv
    else:
        nq = out_h * out_w
        total += (c + 4) * c * nq                # mlp1
        total += 4 * c * c * nq                  # attention projections
        total += 2 * c * c * nq                  # kv outer product + readout
        total += (c + 2) * c * nq                # mlp2
        total += c * 3 * nq                      # mlp3
    return int(total)
