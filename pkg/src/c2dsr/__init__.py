"""Continuous-to-discrete two-stage training for hierarchical-encoding
windowed-attention super-resolution, built on a small numpy autodiff core."""

from .model import ModelConfig, PRESETS, SRModel, count_flops, count_params
from .tensor import Tensor

__all__ = ["ModelConfig", "PRESETS", "SRModel", "Tensor",
           "count_flops", "count_params"]
