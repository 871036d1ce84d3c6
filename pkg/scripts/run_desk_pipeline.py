#!/usr/bin/env python3
"""End-to-end desk-scale run: data generation, both training stages, and a
final evaluation against the bicubic baseline.

Equivalent to the CLI sequence gen-data / train1 / train2 / eval with the
desk preset, but in one process, with wall-clock reporting per phase.
"""

import argparse
import time
from pathlib import Path

import numpy as np

from c2dsr import tensor as T
from c2dsr.config import RunConfig, resolve_config
from c2dsr.data import bicubic_resize, generate_dataset, list_dataset, load_image
from c2dsr.metrics import run_benchmark
from c2dsr.model import DISCRETE
from c2dsr.train import (TrainPlan, load_checkpoint, train_stage1,
                         train_stage2, transfer_weights)


def desk_config(data_root, seed):
    return resolve_config({
        "model": {"preset": "desk"},
        "train1": {"lr_max": "2e-3", "lr_min": "1e-4", "epochs": "30",
                   "warmup": "2", "batches_per_epoch": "70",
                   "lr_size": "32", "q_count": "256", "loss": "l2"},
        "train2": {"lr_max": "1e-3", "lr_min": "1e-4", "epochs": "15",
                   "warmup": "1", "batches_per_epoch": "100",
                   "lr_size": "32", "scale": "2", "loss": "l2"},
        "data": {"root": str(data_root), "n_train": "64", "n_val": "16"},
    })


def plan_from(sec, stage, scale=None):
    kw = dict(lr_max=sec.lr_max, lr_min=sec.lr_min, epochs=sec.epochs,
              warmup=sec.warmup, batch=sec.batch,
              batches_per_epoch=sec.batches_per_epoch, lr_size=sec.lr_size,
              q_count=sec.q_count, loss=sec.loss)
    if stage == 2:
        kw["scale"] = scale
    return TrainPlan(stage=stage, **kw)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out-dir", default="runs/desk")
    ap.add_argument("--data-root", default="runs/desk/data")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cfg = desk_config(args.data_root, args.seed)
    t_start = time.time()

    root = Path(args.data_root)
    if not (root / "train" / "hr").exists():
        generate_dataset(root / "train", cfg.data.n_train, cfg.data.image_size,
                         seed=cfg.data.seed)
        generate_dataset(root / "val", cfg.data.n_val, cfg.data.image_size,
                         seed=cfg.data.seed + 10_000)
    pool = [load_image(p) for p in list_dataset(root / "train")]
    val = [(p.name, load_image(p)) for p in list_dataset(root / "val")]
    print(f"data ready ({len(pool)} train / {len(val)} val) "
          f"[{time.time() - t_start:.1f}s]")

    t0 = time.time()
    train_stage1(cfg.model, plan_from(cfg.train1, 1), pool, args.seed,
                 out_path=out / "stage1.ckpt", log_path=out / "stage1_log.csv",
                 val_images=[im for _, im in val[:2]])
    print(f"stage 1 done [{time.time() - t0:.1f}s]")

    t0 = time.time()
    model = transfer_weights(load_checkpoint(out / "stage1.ckpt"),
                             cfg.model if cfg.model.upsampler == DISCRETE else cfg.model,
                             np.random.default_rng(np.random.SeedSequence([args.seed, 2])))
    train_stage2(model, plan_from(cfg.train2, 2, scale=2), pool, args.seed,
                 out_path=out / "stage2.ckpt", log_path=out / "stage2_log.csv",
                 val_images=[im for _, im in val[:2]])
    print(f"stage 2 done [{time.time() - t0:.1f}s]")

    report = run_benchmark(lambda lr: model(T.constant(lr)).data, val, 2,
                           model_name="desk", out_csv=out / "eval_x2.csv")
    base = run_benchmark(lambda lr: bicubic_resize(lr, s=2.0, direction="up"),
                         val, 2, model_name="bicubic",
                         out_csv=out / "bicubic_x2.csv")
    gain = report.mean_psnr - base.mean_psnr
    print(f"model  {report.mean_psnr:.3f} dB / SSIM {report.mean_ssim:.5f}")
    print(f"bicubic {base.mean_psnr:.3f} dB / SSIM {base.mean_ssim:.5f}")
    print(f"gain   {gain:+.3f} dB   total {time.time() - t_start:.1f}s")


if __name__ == "__main__":
    main()
