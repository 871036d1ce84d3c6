#!/usr/bin/env python3
"""Print parameter counts and FLOPs for the bundled presets and all ablation
window schedules, at the standard 720x1280 output resolution."""

from c2dsr.config import ABLATIONS, RunConfig, apply_ablation, resolve_config
from c2dsr.model import PRESETS, count_flops, count_params


def row(name, cfg, out_hw=(720, 1280)):
    p = count_params(cfg)
    f = count_flops(cfg, out_hw)
    print(f"{name:24s} #Para. {p / 1e3:8.1f}K   FLOPs {f / 1e9:7.2f}G")


def main():
    print("presets (720x1280 output):")
    for name, cfg in PRESETS.items():
        row(name, cfg)
    print("\nablations of srformer-c2d-x4:")
    base = resolve_config({"model": {"preset": "srformer-c2d-x4"}})
    for name in ABLATIONS:
        row(name, apply_ablation(base, name).model)
    print("\nper-module split, srformer-c2d-x4:")
    for mod, n in count_params(PRESETS["srformer-c2d-x4"], per_module=True).items():
        print(f"  {mod:12s} {n / 1e3:8.1f}K")


if __name__ == "__main__":
    main()
