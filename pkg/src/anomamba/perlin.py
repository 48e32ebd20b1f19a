"""Classic gradient (Perlin) noise and mask thresholding.

Fields are generated on an (rx, ry) lattice with quintic fade
6t^5 - 15t^4 + 10t^3 and scaled by sqrt(2) so values land in [-1, 1].
Every draw is a pure function of (seed, resolution, H, W).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import MaskSynthesisError, ShapeError
from .utils import derive_seed


@dataclass
class PerlinField:
    values: np.ndarray  # (H, W) in [-1, 1]
    lattice_resolution: tuple[int, int]
    seed: int


def _fade(t: np.ndarray) -> np.ndarray:
    return t * t * t * (t * (t * 6.0 - 15.0) + 10.0)


def _lerp(a, b, w):
    return a + (b - a) * w


def perlin(h: int, w: int, resolution: tuple[int, int], seed: int) -> PerlinField:
    """Gradient noise field; pads to the next lattice multiple and crops back."""
    rx, ry = int(resolution[0]), int(resolution[1])
    if rx < 1 or ry < 1:
        raise ShapeError(f"perlin: resolution {resolution} must be >= 1")
    if h < rx or w < ry:
        raise ShapeError(f"perlin: field {h}x{w} smaller than lattice {rx}x{ry}")

    hp = -(-h // rx) * rx
    wp = -(-w // ry) * ry
    dx, dy = hp // rx, wp // ry

    rng = np.random.default_rng(seed)
    angles = rng.uniform(0.0, 2.0 * np.pi, size=(rx + 1, ry + 1))
    grad = np.stack([np.cos(angles), np.sin(angles)], axis=-1)

    # Per-pixel fractional offset inside its lattice cell; zero at lattice nodes.
    fy = (np.arange(hp) % dx) / dx
    fx = (np.arange(wp) % dy) / dy
    oy = fy[:, None]
    ox = fx[None, :]

    cy = (np.arange(hp) // dx)[:, None]
    cx = (np.arange(wp) // dy)[None, :]

    def corner_dot(sy: int, sx: int) -> np.ndarray:
        g = grad[cy + sy, cx + sx]
        return g[..., 0] * (oy - sy) + g[..., 1] * (ox - sx)

    n00 = corner_dot(0, 0)
    n10 = corner_dot(1, 0)
    n01 = corner_dot(0, 1)
    n11 = corner_dot(1, 1)
    ty = _fade(oy)
    tx = _fade(ox)
    field = np.sqrt(2.0) * _lerp(_lerp(n00, n01, tx), _lerp(n10, n11, tx), ty)
    return PerlinField(values=field[:h, :w], lattice_resolution=(rx, ry), seed=seed)


def binarize(
    field: PerlinField,
    threshold: float,
    area_bounds: tuple[float, float] = (0.001, 0.30),
    max_resamples: int = 10,
) -> np.ndarray:
    """Threshold the max-abs-normalized field into a {0,1} mask.

    Degenerate masks (area fraction outside ``area_bounds``) are resampled
    with a seed derived from the field's, up to ``max_resamples`` tries.
    """
    if not -1.0 < threshold < 1.0:
        raise ValueError(f"binarize: threshold {threshold} outside (-1, 1)")
    lo, hi = area_bounds
    h, w = field.values.shape
    cur = field
    for attempt in range(max_resamples):
        peak = np.abs(cur.values).max()
        ref = cur.values / peak if peak > 0 else cur.values
        mask = (ref >= threshold).astype(np.float32)
        frac = float(mask.mean())
        if lo <= frac <= hi:
            return mask
        cur = perlin(h, w, field.lattice_resolution, derive_seed(field.seed, "resample", attempt))
    raise MaskSynthesisError(
        f"mask area stayed outside [{lo}, {hi}] after {max_resamples} resamples; "
        f"adjust resolution {field.lattice_resolution} or threshold {threshold}"
    )
