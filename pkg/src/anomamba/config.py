"""Run configuration: dataclass tree, presets, key=value file parsing."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field, fields, is_dataclass, replace
from pathlib import Path

from .backbone import BackboneSpec
from .errors import ShapeError
from .recon import ReconConfig
from .refine import RefineConfig
from .synth import SynthConfig


@dataclass
class RunConfig:
    """Shipped defaults follow the reference training recipe (256px inputs,
    64px feature grid, batch 4, 700 epochs, Adam at 1e-4); the desk preset
    shrinks everything to commodity-CPU scale."""

    image_size: int = 256
    grid_size: int = 64
    batch_size: int = 4
    epochs: int = 700
    lr: float = 1e-4
    seed: int = 0
    precision: str = "f32"  # or "f64"
    refine_enabled: bool = True
    checkpoint_every: int = 50
    strict_deterministic: bool = False
    image_score_mode: str = "max"
    backbone: BackboneSpec = field(default_factory=BackboneSpec)
    recon: ReconConfig = field(default_factory=ReconConfig)
    refine: RefineConfig = field(default_factory=RefineConfig)
    synth: SynthConfig = field(default_factory=SynthConfig)

    def __post_init__(self):
        if self.precision not in ("f32", "f64"):
            raise ValueError(f"precision {self.precision!r} must be f32 or f64")
        if self.image_size % self.grid_size:
            raise ShapeError(f"image size {self.image_size} not a multiple of grid {self.grid_size}")
        if self.grid_size % self.recon.patch_size:
            raise ShapeError(
                f"grid {self.grid_size} not divisible by patch {self.recon.patch_size}"
            )

    @property
    def dtype(self):
        import numpy as np

        return np.float32 if self.precision == "f32" else np.float64


def desk_profile(seed: int = 0) -> RunConfig:
    """Small configuration that trains in minutes on a CPU."""
    return RunConfig(
        image_size=128,
        grid_size=64,
        epochs=12,
        lr=3e-4,
        seed=seed,
        backbone=BackboneSpec(),
        recon=ReconConfig(embed_dim=64, depth=2, reduced_channels=64, state_dim=8),
        refine=RefineConfig(depth=3, base_channels=16),
    )


# ---------------------------------------------------------------------------
# key=value config files with dotted paths, e.g. ``recon.depth = 4``


def _coerce(value: str, target):
    if isinstance(target, bool):
        if value.lower() in ("1", "true", "yes", "on"):
            return True
        if value.lower() in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"expected a boolean, got {value!r}")
    if isinstance(target, int) and not isinstance(target, bool):
        return int(value)
    if isinstance(target, float):
        return float(value)
    if isinstance(target, tuple):
        parts = [p.strip() for p in value.split(",") if p.strip()]
        elem = target[0] if target else 0
        return tuple(_coerce(p, elem) for p in parts)
    if target is None or isinstance(target, str):
        return value
    raise ValueError(f"cannot parse {value!r} as {type(target).__name__}")


def apply_setting(cfg: RunConfig, dotted: str, value: str) -> RunConfig:
    """Return a config with one dotted key replaced (validates via replace)."""
    parts = dotted.split(".")
    def rec(obj, idx):
        name = parts[idx]
        if not is_dataclass(obj) or name not in {f.name for f in fields(obj)}:
            raise KeyError(f"unknown config key {dotted!r}")
        cur = getattr(obj, name)
        if idx == len(parts) - 1:
            return replace(obj, **{name: _coerce(value, cur)})
        return replace(obj, **{name: rec(cur, idx + 1)})

    return rec(cfg, 0)


def load_config_file(path, base: RunConfig | None = None) -> RunConfig:
    cfg = base if base is not None else RunConfig()
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected key = value, got {line!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        cfg = apply_setting(cfg, key, value)
    return cfg


def config_to_dict(cfg) -> dict:
    """JSON-ready nested dict (tuples become lists)."""
    out = {}
    for f in fields(cfg):
        v = getattr(cfg, f.name)
        if is_dataclass(v):
            out[f.name] = config_to_dict(v)
        elif isinstance(v, tuple):
            out[f.name] = list(v)
        else:
            out[f.name] = v
    return out


def config_from_dict(d: dict) -> RunConfig:
    def build(cls, sub: dict):
        kwargs = {}
        for f in fields(cls):
            if f.name not in sub:
                continue
            v = sub[f.name]
            default = f.default_factory() if f.default_factory is not dataclasses.MISSING else f.default
            if is_dataclass(default):
                kwargs[f.name] = build(type(default), v)
            elif isinstance(default, tuple) and isinstance(v, list):
                kwargs[f.name] = tuple(v)
            else:
                kwargs[f.name] = v
        return cls(**kwargs)

    return build(RunConfig, d)
