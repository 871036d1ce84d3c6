"""Command-line entry point: data generation, two-stage training, evaluation,
single-image inference, complexity accounting and ablation presets.
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import tensor as T
from .config import ConfigError, RunConfig, format_config, load_config, run_config_hash
from .data import DataError, generate_dataset, list_dataset, load_image, save_image
from .metrics import MetricError, run_benchmark
from .model import DISCRETE, SRModel, count_flops, count_params
from .train import (CheckpointError, TrainPlan, TrainingDiverged, load_checkpoint,
                    restore_model, train_stage1, train_stage2, transfer_weights)


def _data_root(cfg: RunConfig):
    root = cfg.data.root or os.environ.get("C2D_DATA_ROOT", "")
    if not root:
        raise ConfigError("no dataset root: set data.root or C2D_DATA_ROOT")
    return Path(root)


def _plan_from_section(sec, stage, model_scale):
    kwargs = dict(lr_max=sec.lr_max, lr_min=sec.lr_min, epochs=sec.epochs,
                  warmup=sec.warmup, batch=sec.batch,
                  batches_per_epoch=sec.batches_per_epoch, lr_size=sec.lr_size,
                  q_count=sec.q_count, loss=sec.loss)
    if stage == 2:
        kwargs["scale"] = sec.scale or int(model_scale)
    return TrainPlan(stage=stage, **kwargs)


def _load_pool(root, split):
    return [load_image(p) for p in list_dataset(Path(root) / split)]


def cmd_gen_data(cfg, args):
    root = _data_root(cfg)
    train = generate_dataset(root / "train", cfg.data.n_train,
                             cfg.data.image_size, seed=cfg.data.seed)
    val = generate_dataset(root / "val", cfg.data.n_val,
                           cfg.data.image_size, seed=cfg.data.seed + 10_000)
    print(f"wrote {len(train)} training and {len(val)} validation images under {root}")
    return 0


def cmd_train1(cfg, args):
    root = _data_root(cfg)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    pool = _load_pool(root, "train")
    val = _load_pool(root, "val")[:2]
    plan = _plan_from_section(cfg.train1, 1, cfg.model.scale)
    train_stage1(cfg.model, plan, pool, args.seed,
                 out_path=out_dir / "stage1.ckpt",
                 log_path=out_dir / "stage1_log.csv", val_images=val)
    print(f"stage-1 checkpoint: {out_dir / 'stage1.ckpt'}")
    return 0


def cmd_train2(cfg, args):
    root = _data_root(cfg)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    pool = _load_pool(root, "train")
    val = _load_pool(root, "val")[:2]
    cfg2 = replace(cfg.model, upsampler=DISCRETE,
                   scale=cfg.train2.scale or int(cfg.model.scale))
    rng = np.random.default_rng(np.random.SeedSequence([args.seed, 2]))
    if args.from_ckpt:
        model = transfer_weights(load_checkpoint(args.from_ckpt), cfg2, rng)
        plan = _plan_from_section(cfg.train2, 2, cfg2.scale)
    else:
        # no continuous pre-training (ablation v1.1): train from scratch with
        # the stage-1 learning-rate bounds over the combined epoch budget
        model = SRModel(cfg2, rng)
        sec = cfg.train2
        plan = TrainPlan(stage=2, lr_max=cfg.train1.lr_max, lr_min=cfg.train1.lr_min,
                         epochs=cfg.train1.epochs + sec.epochs, warmup=cfg.train1.warmup,
                         batch=sec.batch, batches_per_epoch=sec.batches_per_epoch,
                         lr_size=sec.lr_size, scale=cfg2.scale, loss=sec.loss)
    train_stage2(model, plan, pool, args.seed,
                 out_path=out_dir / "stage2.ckpt",
                 log_path=out_dir / "stage2_log.csv", val_images=val)
    print(f"stage-2 checkpoint: {out_dir / 'stage2.ckpt'}")
    return 0


def _restore_discrete(cfg, ckpt_path, scale):
    cfg2 = replace(cfg.model, upsampler=DISCRETE, scale=int(scale))
    ckpt = load_checkpoint(ckpt_path)
    if ckpt.stage != 2:
        raise CheckpointError(f"evaluation needs a stage-2 checkpoint, got stage {ckpt.stage}")
    return restore_model(SRModel(cfg2), ckpt)


def cmd_eval(cfg, args):
    model = _restore_discrete(cfg, args.checkpoint, args.scale)
    root = Path(args.dataset) if args.dataset else _data_root(cfg) / "val"
    images = [(p.name, load_image(p)) for p in list_dataset(root)]
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    out_csv = out_dir / f"eval_x{args.scale}.csv"

    def sr_fn(lr):
        return model(T.constant(lr)).data

    report = run_benchmark(sr_fn, images, args.scale, model_name=args.checkpoint,
                           dataset_tag=str(root), on_y=cfg.eval.on_y,
                           border_crop=cfg.eval.border_crop, out_csv=out_csv)
    print(f"{len(report.rows)} images  mean PSNR {report.mean_psnr:.3f} dB  "
          f"mean SSIM {report.mean_ssim:.5f}  -> {out_csv}")
    return 0


def cmd_infer(cfg, args):
    model = _restore_discrete(cfg, args.checkpoint, args.scale)
    img = load_image(args.input)
    sr = np.clip(model(T.constant(img)).data, 0.0, 1.0)
    save_image(sr, args.output)
    print(f"{args.input} ({img.shape[0]}x{img.shape[1]}) -> "
          f"{args.output} ({sr.shape[0]}x{sr.shape[1]})")
    return 0


def cmd_complexity(cfg, args):
    out_h, out_w = (int(v) for v in args.out_size.split("x"))
    params = count_params(cfg.model)
    flops = count_flops(cfg.model, (out_h, out_w))
    print(f"#Para.: {params} ({params / 1e3:.1f}K)")
    print(f"FLOPs at {out_h}x{out_w} output: {flops} ({flops / 1e9:.2f}G)")
    return 0


def cmd_ablation(cfg, args):
    from .config import ABLATIONS, apply_ablation

    names = [args.preset] if args.preset else list(ABLATIONS)
    for name in names:
        variant = apply_ablation(cfg, name)
        params = count_params(variant.model)
        flops = count_flops(variant.model, (720, 1280))
        note = "skip stage 1" if name == "v1.1" else "config transform"
        print(f"{name}: #Para. {params / 1e3:.1f}K  FLOPs {flops / 1e9:.2f}G  ({note})")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(prog="c2dsr")
    parser.add_argument("--config", default=None, help="config file (sectioned text or JSON)")
    parser.add_argument("--set", action="append", default=[], metavar="KEY=VAL",
                        dest="overrides", help="override section.key=value (repeatable)")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--out-dir", default="runs")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("gen-data")
    sub.add_parser("train1")
    p2 = sub.add_parser("train2")
    p2.add_argument("--from-ckpt", default=None, help="stage-1 checkpoint to transfer from")
    pe = sub.add_parser("eval")
    pe.add_argument("checkpoint")
    pe.add_argument("--scale", type=int, default=2)
    pe.add_argument("--dataset", default=None)
    pi = sub.add_parser("infer")
    pi.add_argument("checkpoint")
    pi.add_argument("input")
    pi.add_argument("output")
    pi.add_argument("--scale", type=int, default=2)
    pc = sub.add_parser("complexity")
    pc.add_argument("--out-size", default="720x1280")
    pa = sub.add_parser("ablation")
    pa.add_argument("--preset", default=None)
    return parser


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train1": cmd_train1,
    "train2": cmd_train2,
    "eval": cmd_eval,
    "infer": cmd_infer,
    "complexity": cmd_complexity,
    "ablation": cmd_ablation,
}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args.config, args.overrides)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    print(format_config(cfg))
    print(f"seed = {args.seed}")
    try:
        return COMMANDS[args.command](cfg, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (DataError, MetricError, CheckpointError, TrainingDiverged) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
