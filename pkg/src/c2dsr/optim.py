"""Adam optimizer and the warm-up + cosine-annealing learning-rate schedule."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .tensor import TensorError


@dataclass
class LrSchedule:
    """Linear warm-up from lr_min to lr_max, then cosine decay back to lr_min.

    The ramp reaches lr_max exactly at epoch == warmup_epochs and the cosine
    tail reaches lr_min exactly at the final epoch.
    """

    lr_max: float
    lr_min: float
    warmup_epochs: int
    total_epochs: int

    def __post_init__(self):
        if not (0 <= self.warmup_epochs < self.total_epochs):
            raise ValueError("need 0 <= warmup_epochs < total_epochs")
        if self.lr_min > self.lr_max:
            raise ValueError("lr_min must not exceed lr_max")

    def lr_at_epoch(self, epoch: int) -> float:
        if not 0 <= epoch < self.total_epochs:
            raise ValueError(f"epoch {epoch} outside [0, {self.total_epochs})")
        if epoch < self.warmup_epochs:
            frac = epoch / self.warmup_epochs
            return self.lr_min + (self.lr_max - self.lr_min) * frac
        span = self.total_epochs - 1 - self.warmup_epochs
        if span == 0:
            return self.lr_max if epoch == self.warmup_epochs else self.lr_min
        frac = (epoch - self.warmup_epochs) / span
        return self.lr_min + 0.5 * (self.lr_max - self.lr_min) * (1.0 + math.cos(math.pi * frac))


@dataclass
class AdamState:
    """Per-parameter first/second moment buffers plus the shared step count."""

    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


class Adam:
    """Bias-corrected Adam over a named-parameter dict."""

    def __init__(self, params, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = dict(params)
        self.state = AdamState(beta1=beta1, beta2=beta2, eps=eps)
        for name, p in self.params.items():
            self.state.m[name] = np.zeros_like(p.data)
            self.state.v[name] = np.zeros_like(p.data)

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def step(self, lr: float):
        st = self.state
        st.step += 1
        b1c = 1.0 - st.beta1 ** st.step
        b2c = 1.0 - st.beta2 ** st.step
        for name, p in self.params.items():
            g = p.grad
            if g is None:
                continue
            if g.shape != p.data.shape:
                raise TensorError(f"gradient shape mismatch for {name}")
            m = st.m[name]
            v = st.v[name]
            m += (1.0 - st.beta1) * (g - m)
            v += (1.0 - st.beta2) * (g * g - v)
            update = lr * (m / b1c) / (np.sqrt(v / b2c) + st.eps)
            p.data -= update.astype(np.float32)
