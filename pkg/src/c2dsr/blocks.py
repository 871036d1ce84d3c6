"""U-Net style arrangement of HiET layers with window-size schedules.

Feature resolution never changes inside a block; the encoder shrinks the
attention window layer by layer and the decoder grows it again, fusing each
decoder layer's input with the output of the equal-window encoder layer
through a 1x1 convolution.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

from . import tensor as T
from .layers import HiETLayer, Linear, Module

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class WindowSchedule:
    """Encoder (non-increasing) and decoder (non-decreasing) window sizes."""

    encoder_sizes: tuple        # of (w, h)
    decoder_sizes: tuple        # of (w, h)

    def __post_init__(self):
        if not self.encoder_sizes:
            raise ValueError("schedule needs at least one encoder layer")

    @property
    def all_sizes(self):
        return self.encoder_sizes + self.decoder_sizes


def build_window_schedule(spec, patch=None) -> WindowSchedule:
    """Split a flat window-size list into encoder and decoder halves.

    The encoder is the prefix up to and including the first minimum; the rest
    is the decoder. Sizes exceeding the patch extents are clamped (warned),
    since a window can never be larger than the feature map it partitions.
    """
    if not spec:
        raise ValueError("empty window schedule")
    sizes = [(s, s) if isinstance(s, int) else tuple(s) for s in spec]
    if patch is not None:
        H, W = patch
        clamped = []
        for w, h in sizes:
            cw, ch = min(w, W), min(h, H)
            if (cw, ch) != (w, h):
                log.warning("window %s exceeds patch %s; clamped to %s",
                            (w, h), patch, (cw, ch))
            clamped.append((cw, ch))
        sizes = clamped
    areas = [w * h for w, h in sizes]
    cut = areas.index(min(areas))
    return WindowSchedule(tuple(sizes[:cut + 1]), tuple(sizes[cut + 1:]))


def _pair_indices(schedule: WindowSchedule):
    """Encoder index fused into each decoder layer (forward order).

    Prefers the deepest encoder layer with an equal window; falls back to
    mirroring positions when no window matches (irregular ablation schedules).
    """
    enc = schedule.encoder_sizes
    pairs = []
    m = len(enc)
    for k, size in enumerate(schedule.decoder_sizes):
        matches = [i for i, e in enumerate(enc) if e == size]
        pairs.append(matches[-1] if matches else max(m - 1 - k, 0))
    return pairs


class HiETBlock(Module):
    """Encoder/decoder chain of HiET layers with 1x1-conv skip fusion."""

    def __init__(self, channels, schedule: WindowSchedule, rng, ffn_ratio=2,
                 use_hier_encoding=True, use_unet=True, block_residual=True):
        self.schedule = schedule
        self.use_unet = use_unet
        self.block_residual = block_residual
        self.encoder = [HiETLayer(channels, s, rng, ffn_ratio, use_hier_encoding)
                        for s in schedule.encoder_sizes]
        self.decoder = [HiETLayer(channels, s, rng, ffn_ratio, use_hier_encoding)
                        for s in schedule.decoder_sizes]
        if use_unet:
            self.fusion = [Linear(2 * channels, channels, rng)
                           for _ in schedule.decoder_sizes]
        else:
            self.fusion = []
        self._pairs = _pair_indices(schedule)

    def __call__(self, x):
        if not self.use_unet:
            return self._linear_chain(x)
        enc_outs = []
        cur = x
        for layer in self.encoder:
            cur = layer(cur)
            enc_outs.append(cur)
        for k, layer in enumerate(self.decoder):
            fused = self.fusion[k](
                T.concat([cur, enc_outs[self._pairs[k]]], axis=-1))
            cur = layer(fused)
        return x + cur if self.block_residual else cur

    def _linear_chain(self, x):
        cur = x
        for layer in self.encoder + self.decoder:
            cur = layer(cur)
        return x + cur if self.block_residual else cur
