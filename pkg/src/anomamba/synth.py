"""Synthetic defect injection: texture bank + mask blending.

The blend keeps the image untouched off-mask and mixes in a foreign texture
at opacity alpha on-mask:

    out = (1 - M) * I + (1 - alpha) * (M * I) + alpha * (M * A)
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ShapeError
from .perlin import binarize, perlin
from .utils import derive_seed, rng_from

# Incremented on every synthesize() call; lets tests assert the inference
# path never synthesizes.
SYNTH_CALL_COUNT = 0

TEXTURE_FAMILIES = ("stripes", "checker", "noise")


@dataclass
class SynthConfig:
    alpha_range: tuple[float, float] = (0.15, 1.0)
    lattice_choices: tuple[int, ...] = (2, 4, 8, 16)
    threshold: float = 0.5
    area_bounds: tuple[float, float] = (0.001, 0.30)
    max_resamples: int = 10
    texture_dir: str | None = None


@dataclass
class SynthPair:
    image_a: np.ndarray  # (3, H, W) in [0, 1]
    mask: np.ndarray  # (H, W) in {0, 1}
    alpha: float
    source_texture_id: str


# ---------------------------------------------------------------------------
# procedural texture bank


def _pick_colors(rng: np.random.Generator, min_contrast: float = 0.25):
    c0 = rng.uniform(0.0, 1.0, size=3)
    c1 = rng.uniform(0.0, 1.0, size=3)
    while np.abs(c0 - c1).max() < min_contrast:
        c1 = rng.uniform(0.0, 1.0, size=3)
    return c0, c1


def texture_params(family: str, rng: np.random.Generator) -> dict:
    """Draw one texture's identity (colors, frequency, ...) for a family."""
    c0, c1 = _pick_colors(rng)
    if family == "stripes":
        return {
            "theta": rng.uniform(0.0, np.pi),
            "cycles": rng.uniform(4.0, 14.0),
            "sharp": rng.uniform(1.0, 6.0),
            "c0": c0,
            "c1": c1,
        }
    if family == "checker":
        return {"cell_frac": rng.uniform(1 / 24, 1 / 6), "c0": c0, "c1": c1}
    if family == "noise":
        return {"scale": int(rng.choice([4, 8, 16])), "c0": c0, "c1": c1}
    raise ValueError(f"unknown texture family {family!r}")


def render_texture(family: str, params: dict, rng: np.random.Generator, h: int, w: int) -> np.ndarray:
    """Render one sample of the texture; ``rng`` drives per-sample jitter only
    (phase/offset/fresh blotches), so one parameter set is one appearance."""
    c0 = params["c0"][:, None, None]
    c1 = params["c1"][:, None, None]
    if family == "stripes":
        theta = params["theta"] + rng.uniform(-0.03, 0.03)
        phase = rng.uniform(0.0, 2.0 * np.pi)
        yy, xx = np.mgrid[0:h, 0:w]
        coord = (xx * np.cos(theta) + yy * np.sin(theta)) / max(h, w)
        s = 0.5 + 0.5 * np.sin(2.0 * np.pi * params["cycles"] * coord + phase)
        sharp = params["sharp"]
        s = s**sharp / (s**sharp + (1.0 - s) ** sharp)
    elif family == "checker":
        cell = max(3, int(round(params["cell_frac"] * max(h, w))))
        ox = int(rng.integers(0, cell))
        oy = int(rng.integers(0, cell))
        yy, xx = np.mgrid[0:h, 0:w]
        s = (((yy + oy) // cell + (xx + ox) // cell) % 2).astype(np.float64)
    elif family == "noise":
        scale = params["scale"]
        gh, gw = max(2, h // scale), max(2, w // scale)
        coarse = rng.uniform(0.0, 1.0, size=(gh, gw))
        ys = np.clip((np.arange(h) + 0.5) * (gh / h) - 0.5, 0, gh - 1)
        xs = np.clip((np.arange(w) + 0.5) * (gw / w) - 0.5, 0, gw - 1)
        y0 = np.floor(ys).astype(int)
        x0 = np.floor(xs).astype(int)
        y1 = np.minimum(y0 + 1, gh - 1)
        x1 = np.minimum(x0 + 1, gw - 1)
        wy = (ys - y0)[:, None]
        wx = (xs - x0)[None, :]
        s = (
            coarse[np.ix_(y0, x0)] * (1 - wy) * (1 - wx)
            + coarse[np.ix_(y0, x1)] * (1 - wy) * wx
            + coarse[np.ix_(y1, x0)] * wy * (1 - wx)
            + coarse[np.ix_(y1, x1)] * wy * wx
        )
    else:
        raise ValueError(f"unknown texture family {family!r}")
    return (c0 + (c1 - c0) * s).astype(np.float32)


def random_texture(family: str, rng: np.random.Generator, h: int, w: int) -> np.ndarray:
    """Fresh identity + fresh jitter: the anomaly-texture draw."""
    return render_texture(family, texture_params(family, rng), rng, h, w)


@dataclass
class TextureBank:
    """Source of anomaly textures A: procedural by default, or a user directory."""

    config: SynthConfig = field(default_factory=SynthConfig)
    families: tuple[str, ...] = TEXTURE_FAMILIES
    _files: list[Path] | None = None

    def __post_init__(self):
        if self.config.texture_dir is not None:
            root = Path(self.config.texture_dir)
            self._files = sorted(
                p for p in root.iterdir() if p.suffix.lower() in (".png", ".ppm", ".jpg", ".jpeg", ".bmp")
            )
            if not self._files:
                raise FileNotFoundError(f"no raster files in texture dir {root}")

    def draw(self, h: int, w: int, seed: int) -> tuple[np.ndarray, str]:
        rng = np.random.default_rng(seed)
        if self._files is not None:
            from .data import load_image  # local import: data depends on synth

            path = self._files[int(rng.integers(0, len(self._files)))]
            return load_image(path, (h, w)), f"file:{path.name}"
        fam = self.families[int(rng.integers(0, len(self.families)))]
        return random_texture(fam, rng, h, w), f"{fam}:{seed}"


# ---------------------------------------------------------------------------


def synthesize(image: np.ndarray, texture: np.ndarray, mask: np.ndarray, alpha: float,
               texture_id: str = "") -> SynthPair:
    """Blend ``texture`` into ``image`` on ``mask`` at opacity ``alpha``."""
    global SYNTH_CALL_COUNT
    SYNTH_CALL_COUNT += 1
    if image.shape != texture.shape or image.shape[1:] != mask.shape:
        raise ShapeError(
            f"synthesize: image {image.shape}, texture {texture.shape}, mask {mask.shape}"
        )
    if not 0.0 < alpha <= 1.0:
        raise ValueError(f"synthesize: alpha {alpha} outside (0, 1]")
    m = mask[None].astype(image.dtype)
    out = (1.0 - m) * image + (1.0 - alpha) * (m * image) + alpha * (m * texture)
    np.clip(out, 0.0, 1.0, out=out)
    # Off-mask pixels must be bit-identical to the original.
    out = np.where(m == 0.0, image, out)
    return SynthPair(image_a=out, mask=mask.astype(np.float32), alpha=float(alpha),
                     source_texture_id=texture_id)


def draw_synth_pair(image: np.ndarray, cfg: SynthConfig, bank: TextureBank, seed: int) -> SynthPair:
    """Seed-deterministic full draw: lattice resolution, mask, texture, alpha."""
    h, w = image.shape[1:]
    rng = rng_from(seed, "synth-draw")
    rx = int(rng.choice(cfg.lattice_choices))
    ry = int(rng.choice(cfg.lattice_choices))
    fld = perlin(h, w, (rx, ry), derive_seed(seed, "perlin"))
    mask = binarize(fld, cfg.threshold, cfg.area_bounds, cfg.max_resamples)
    texture, tex_id = bank.draw(h, w, derive_seed(seed, "texture"))
    alpha = float(rng.uniform(*cfg.alpha_range))
    return synthesize(image, texture, mask, alpha, tex_id)
