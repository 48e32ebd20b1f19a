"""Refinement head: channel means of the feature stacks in, anomaly map out.

A small U-Net (stride-2 conv downsampling, transposed-conv upsampling with
skip concatenation) runs at the feature grid, then extra transposed convs
bridge the grid up to image resolution; a sigmoid bounds scores to [0, 1].
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nnops
from .backbone import FeatureStack
from .errors import ShapeError
from .params import Module
from .tensor import Tensor, concat, parameter, reduce_mean, relu, sigmoid
from .utils import kaiming_normal, rng_from


@dataclass
class RefineConfig:
    depth: int = 3
    base_channels: int = 32

    def __post_init__(self):
        if self.depth < 1:
            raise ValueError("refine depth must be >= 1")


@dataclass
class AnomalyMap:
    scores: np.ndarray  # (H, W) in [0, 1]
    source_image_id: str = ""

    def __post_init__(self):
        if self.scores.ndim != 2:
            raise ShapeError(f"anomaly map must be H x W, got {self.scores.shape}")
        lo, hi = float(self.scores.min()), float(self.scores.max())
        if lo < 0.0 or hi > 1.0:
            raise ValueError(f"anomaly scores outside [0, 1]: min {lo}, max {hi}")


def channel_mean(stack: FeatureStack) -> Tensor:
    """Mean over the channel axis; keeps a singleton channel dim."""
    axis = 0 if stack.data.ndim == 3 else 1
    return reduce_mean(stack.data, axis=axis, keepdims=True)


class _Conv(Module):
    def __init__(self, rng, c_in, c_out, k, dtype):
        self.w = parameter(kaiming_normal(rng, (c_out, c_in, k, k), fan_in=c_in * k * k, dtype=dtype))
        self.b = parameter(np.zeros(c_out, dtype=dtype))


class _TConv(Module):
    def __init__(self, rng, c_in, c_out, k, dtype):
        self.w = parameter(kaiming_normal(rng, (c_in, c_out, k, k), fan_in=c_in * k * k, dtype=dtype))
        self.b = parameter(np.zeros(c_out, dtype=dtype))


class _DoubleConv(Module):
    def __init__(self, rng, c_in, c_out, dtype):
        self.a = _Conv(rng, c_in, c_out, 3, dtype)
        self.b = _Conv(rng, c_out, c_out, 3, dtype)

    def forward(self, x):
        x = relu(nnops.conv2d(x, self.a.w, self.a.b, padding=1))
        return relu(nnops.conv2d(x, self.b.w, self.b.b, padding=1))


class RefineNet(Module):
    """U-Net over the 2-channel mean maps, upsampled to image resolution."""

    def __init__(self, cfg: RefineConfig, grid_size: int, image_size: int, seed: int, dtype=np.float32):
        if image_size % grid_size:
            raise ShapeError(f"image size {image_size} not a multiple of grid {grid_size}")
        ratio = image_size // grid_size
        if ratio & (ratio - 1):
            raise ShapeError(f"image/grid ratio {ratio} must be a power of two")
        self.cfg_meta = cfg
        self.grid_meta = grid_size
        self.image_meta = image_size
        rng = rng_from(seed, "refine")
        chans = [cfg.base_channels * (2**i) for i in range(cfg.depth)]

        self.encs = []
        c_in = 2
        for c in chans:
            self.encs.append(_DoubleConv(rng, c_in, c, dtype))
            c_in = c
        self.downs = [_Conv(rng, c, c, 3, dtype) for c in chans[:-1]]
        self.up_t = []
        self.up_conv = []
        for i in range(cfg.depth - 2, -1, -1):
            self.up_t.append(_TConv(rng, chans[i + 1], chans[i], 2, dtype))
            self.up_conv.append(_DoubleConv(rng, 2 * chans[i], chans[i], dtype))
        # Bridge from feature grid to image resolution.
        self.bridge = []
        c = chans[0]
        for _ in range(int(np.log2(ratio))):
            c_next = max(c // 2, 4)
            self.bridge.append(_TConv(rng, c, c_next, 2, dtype))
            c = c_next
        self.head = _Conv(rng, c, 1, 1, dtype)

    def forward(self, mean_f: Tensor, mean_fhat: Tensor) -> Tensor:
        """Concat order is a fixed contract: input-branch mean first."""
        if mean_f.shape != mean_fhat.shape:
            raise ShapeError(f"refine: {mean_f.shape} vs {mean_fhat.shape}")
        g = self.grid_meta
        if mean_f.shape[-1] != g or mean_f.shape[-2] != g:
            raise ShapeError(f"refine: inputs {mean_f.shape} vs grid {g}")
        axis = 0 if mean_f.ndim == 3 else 1
        x = concat([mean_f, mean_fhat], axis=axis)

        skips = []
        for i, enc in enumerate(self.encs):
            x = enc.forward(x)
            if i < len(self.encs) - 1:
                skips.append(x)
                d = self.downs[i]
                x = relu(nnops.conv2d(x, d.w, d.b, stride=2, padding=1))
        for t, c, skip in zip(self.up_t, self.up_conv, reversed(skips)):
            x = nnops.conv_transpose2d(x, t.w, t.b, stride=2)
            x = c.forward(concat([skip, x], axis=axis))
        for t in self.bridge:
            x = relu(nnops.conv_transpose2d(x, t.w, t.b, stride=2))
        x = nnops.conv2d(x, self.head.w, self.head.b)
        return sigmoid(x)

    def refine(self, mean_f: Tensor, mean_fhat: Tensor, image_id: str = "") -> AnomalyMap:
        out = self.forward(mean_f, mean_fhat)
        if out.ndim != 3 or out.shape[0] != 1:
            raise ShapeError(f"refine() is per-image; got output {out.shape}")
        return AnomalyMap(scores=np.asarray(out.data[0]), source_image_id=image_id)
