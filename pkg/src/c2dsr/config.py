"""Run configuration: sectioned key=value (or JSON) files, overrides,
ablation presets and stable hashing.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .model import DISCRETE, ModelConfig, PRESETS


class ConfigError(ValueError):
    """Unknown key/section or malformed value; maps to exit code 2."""


@dataclass(frozen=True)
class TrainSection:
    lr_max: float
    lr_min: float = 1e-6
    epochs: int = 700
    warmup: int = 50
    batch: int = 16
    batches_per_epoch: int = 50
    lr_size: int = 64
    q_count: int = 1024
    scale: int = 0             # stage 2 only; 0 = use model scale
    loss: str = "l1"           # "l1" (published default) or "l2"


@dataclass(frozen=True)
class DataSection:
    root: str = ""
    seed: int = 0
    n_train: int = 64
    n_val: int = 16
    image_size: int = 160


@dataclass(frozen=True)
class EvalSection:
    on_y: bool = True
    border_crop: bool = True


@dataclass(frozen=True)
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    train1: TrainSection = field(default_factory=lambda: TrainSection(lr_max=4e-4))
    train2: TrainSection = field(default_factory=lambda: TrainSection(lr_max=1e-5, epochs=300))
    data: DataSection = field(default_factory=DataSection)
    eval: EvalSection = field(default_factory=EvalSection)
    ablation: str = ""


_SECTION_TYPES = {
    "model": ModelConfig,
    "train1": TrainSection,
    "train2": TrainSection,
    "data": DataSection,
    "eval": EvalSection,
}

ABLATIONS = ("v1.1", "v2.1", "v3.1", "v3.2", "v3.3", "v3.4")


def _coerce(raw, ftype, key):
    if isinstance(raw, str):
        raw = raw.strip()
    try:
        if ftype is bool:
            if isinstance(raw, bool):
                return raw
            if raw.lower() in ("true", "1", "yes", "on"):
                return True
            if raw.lower() in ("false", "0", "no", "off"):
                return False
            raise ValueError(raw)
        if ftype is int:
            return int(raw)
        if ftype is float:
            return float(raw)
        if ftype is str:
            return str(raw)
        if ftype is tuple:
            if isinstance(raw, (list, tuple)):
                return tuple(int(v) for v in raw)
            parts = raw.strip("[]() ").replace(",", " ").split()
            return tuple(int(p) for p in parts)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad value for {key!r}: {raw!r}") from exc
    raise ConfigError(f"unsupported field type for {key!r}")


def _apply_section(obj, updates, section):
    ftypes = {f.name: f.type for f in fields(obj)}
    resolved = {}
    for key, raw in updates.items():
        if key == "preset" and section == "model":
            continue
        if key not in ftypes:
            raise ConfigError(f"unknown key {section}.{key}")
        ann = ftypes[key]
        ftype = {"int": int, "float": float, "str": str, "bool": bool,
                 "tuple": tuple}.get(ann, ann)
        if ftype not in (int, float, str, bool, tuple):
            ftype = type(getattr(obj, key))
        resolved[key] = _coerce(raw, ftype, f"{section}.{key}")
    try:
        return replace(obj, **resolved)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _parse_sectioned_text(text):
    """Parse `[section]` / `key = value` lines; `#` and `;` start comments."""
    sections = {}
    current = None
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].split(";", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            current = line[1:-1].strip()
            sections.setdefault(current, {})
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        if current is None:
            raise ConfigError(f"line {lineno}: key outside any [section]")
        key, val = line.split("=", 1)
        sections[current][key.strip()] = val.strip()
    return sections


def load_config(path=None, overrides=()) -> RunConfig:
    """Build a RunConfig from an optional file plus `section.key=value` overrides."""
    sections = {}
    if path is not None:
        text = Path(path).read_text()
        if text.lstrip().startswith("{"):
            try:
                sections = {k: dict(v) if isinstance(v, dict) else v
                            for k, v in json.loads(text).items()}
            except json.JSONDecodeError as exc:
                raise ConfigError(f"bad JSON config: {exc}") from exc
        else:
            sections = _parse_sectioned_text(text)
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override must be section.key=value: {item!r}")
        dotted, val = item.split("=", 1)
        if "." not in dotted:
            raise ConfigError(f"override must be section.key=value: {item!r}")
        section, key = dotted.split(".", 1)
        sections.setdefault(section, {})[key] = val
    return resolve_config(sections)


def resolve_config(sections) -> RunConfig:
    cfg = RunConfig()
    for section, updates in sections.items():
        if section == "ablation":
            name = updates if isinstance(updates, str) else updates.get("name", "")
            if name and name not in ABLATIONS:
                raise ConfigError(f"unknown ablation preset {name!r}")
            cfg = replace(cfg, ablation=name)
            continue
        if section not in _SECTION_TYPES:
            raise ConfigError(f"unknown section [{section}]")
        if section == "model" and "preset" in updates:
            preset = updates["preset"]
            if preset not in PRESETS:
                raise ConfigError(f"unknown model preset {preset!r}")
            cfg = replace(cfg, model=PRESETS[preset])
        cfg = replace(cfg, **{section: _apply_section(getattr(cfg, section),
                                                      dict(updates), section)})
    if cfg.ablation:
        cfg = apply_ablation(cfg, cfg.ablation)
    return cfg


def apply_ablation(cfg: RunConfig, name: str) -> RunConfig:
    """Table-driven config transformations; no dedicated code paths."""
    if name == "v1.1":      # no continuous pre-training; handled by the runner
        return cfg
    if name == "v2.1":
        return replace(cfg, model=replace(cfg.model, use_hier_encoding=False))
    if name == "v3.1":
        return replace(cfg, model=replace(cfg.model, use_unet=False))
    scaled = {
        "v3.2": (32, 16, 8, 8, 16, 32),
        "v3.3": (8, 32, 64, 64, 32, 8),
        "v3.4": (64, 64, 64, 64, 64, 64),
    }
    if name in scaled:
        return replace(cfg, model=replace(cfg.model, schedule=scaled[name]))
    raise ConfigError(f"unknown ablation preset {name!r}")


def run_config_hash(cfg: RunConfig) -> int:
    """64-bit hash covering every semantically meaningful field."""
    canon = json.dumps(dataclasses.asdict(cfg), sort_keys=True, default=list)
    return int.from_bytes(
        hashlib.blake2b(canon.encode(), digest_size=8).digest(), "little")


def format_config(cfg: RunConfig) -> str:
    lines = []
    for f in fields(cfg):
        val = getattr(cfg, f.name)
        if dataclasses.is_dataclass(val):
            lines.append(f"[{f.name}]")
            for sub in fields(val):
                lines.append(f"{sub.name} = {getattr(val, sub.name)}")
        else:
            lines.append(f"[{f.name}]")
            lines.append(f"name = {val}")
    lines.append(f"# config hash: {run_config_hash(cfg):#018x}")
    return "\n".join(lines)
