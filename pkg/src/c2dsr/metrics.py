"""PSNR / SSIM quality metrics and the benchmark runner."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.signal import convolve2d


class MetricError(ValueError):
    pass


def to_luma(img: np.ndarray) -> np.ndarray:
    """BT.601 luma of an RGB float image in [0, 1]."""
    return (0.299 * img[..., 0] + 0.587 * img[..., 1]
            + 0.114 * img[..., 2]).astype(np.float64)


def psnr(a: np.ndarray, b: np.ndarray, on_y: bool = True) -> float:
    """10 log10(1 / MSE) on float images; +inf for identical inputs."""
    if a.shape != b.shape:
        raise MetricError(f"extent mismatch: {a.shape} vs {b.shape}")
    if on_y:
        a, b = to_luma(a), to_luma(b)
    mse = float(np.mean((np.asarray(a, np.float64) - np.asarray(b, np.float64)) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(1.0 / mse)


def _gaussian_window(size=11, sigma=1.5):
    half = (size - 1) / 2
    x = np.arange(size) - half
    g = np.exp(-(x * x) / (2 * sigma * sigma))
    win = np.outer(g, g)
    return win / win.sum()


def ssim(a: np.ndarray, b: np.ndarray, on_y: bool = True) -> float:
    """Mean SSIM over valid 11x11 Gaussian windows (sigma 1.5, K1/K2 = .01/.03)."""
    if a.shape != b.shape:
        raise MetricError(f"extent mismatch: {a.shape} vs {b.shape}")
    if on_y:
        a, b = to_luma(a), to_luma(b)
    else:
        if a.ndim == 3:
            return float(np.mean([ssim(a[..., c], b[..., c], on_y=False)
                                  for c in range(a.shape[-1])]))
    a = np.asarray(a, np.float64)
    b = np.asarray(b, np.float64)
    if min(a.shape[:2]) < 11:
        raise MetricError("image too small for an 11x11 SSIM window")
    win = _gaussian_window()
    c1, c2 = 0.01 ** 2, 0.03 ** 2

    def filt(x):
        return convolve2d(x, win, mode="valid")

    mu_a, mu_b = filt(a), filt(b)
    var_a = filt(a * a) - mu_a * mu_a
    var_b = filt(b * b) - mu_b * mu_b
    cov = filt(a * b) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a ** 2 + mu_b ** 2 + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


@dataclass
class MetricReport:
    """Per-image and aggregate PSNR/SSIM for one model on one dataset."""

    model: str
    dataset: str
    scale: float
    rows: list = field(default_factory=list)   # (name, psnr_db, ssim)
    border_crop: bool = True
    on_y: bool = True

    @property
    def mean_psnr(self):
        vals = [r[1] for r in self.rows]
        return float(np.mean(vals)) if vals else math.nan

    @property
    def mean_ssim(self):
        vals = [r[2] for r in self.rows]
        return float(np.mean(vals)) if vals else math.nan

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["image", "psnr_db", "ssim"])
            for name, p, s in self.rows:
                writer.writerow([name, f"{p:.6f}", f"{s:.8f}"])
            writer.writerow(["MEAN", f"{self.mean_psnr:.6f}", f"{self.mean_ssim:.8f}"])


def crop_border(img, border):
    border = int(border)
    if border <= 0:
        return img
    return img[border:-border, border:-border]


def evaluate_pair(sr, hr, scale, on_y=True, border_crop=True):
    border = int(round(scale)) if border_crop else 0
    return (psnr(crop_border(sr, border), crop_border(hr, border), on_y),
            ssim(crop_border(sr, border), crop_border(hr, border), on_y))


def run_benchmark(sr_fn, hr_images, scale, model_name="model",
                  dataset_tag="dataset", on_y=True, border_crop=True,
                  out_csv=None) -> MetricReport:
    """Bicubic-downsample each HR image by `scale`, super-resolve with `sr_fn`,
    and score against the original.

    `sr_fn(lr) -> sr` must return an image matching the HR extents;
    `hr_images` is a list of (name, image) pairs.
    """
    from .data import bicubic_resize

    if not hr_images:
        raise MetricError("empty dataset")
    report = MetricReport(model=model_name, dataset=dataset_tag, scale=scale,
                          border_crop=border_crop, on_y=on_y)
    for name, hr in hr_images:
        H, W = hr.shape[:2]
        lr = bicubic_resize(hr, out_hw=(int(round(H / scale)), int(round(W / scale))))
        sr = np.clip(np.asarray(sr_fn(lr)), 0.0, 1.0)
        if sr.shape[:2] != (H, W):
            raise MetricError(
                f"scale mismatch: model produced {sr.shape[:2]}, expected {(H, W)}")
        p, s = evaluate_pair(sr, hr, scale, on_y, border_crop)
        report.rows.append((name, p, s))
    if out_csv is not None:
        report.write_csv(out_csv)
    return report
