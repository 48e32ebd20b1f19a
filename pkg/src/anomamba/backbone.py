"""Frozen multi-scale feature extractor and dual-branch embedding.

The extractor is pluggable through BackboneSpec: the desk default is a
small frozen random CNN ("tinytex"); a deeper random profile mimics the
stage geometry of a 50-layer residual net for shape testing; real
pretrained weights can be imported from a checkpoint file whose header
carries the stage list.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nnops
from .errors import ShapeError
from .params import Module
from .tensor import Tensor, concat, parameter, relu
from .utils import kaiming_normal, rng_from

FEATURE_ORIGINS = ("phi", "f_input", "f_hat")


@dataclass
class BackboneSpec:
    name: str = "tinytex"
    stage_channels: tuple[int, ...] = (16, 32, 64)
    stage_strides: tuple[int, ...] = (2, 4, 8)
    selected_stages: tuple[int, ...] = (0, 1, 2)
    weights_source: str = "builtin-random"  # or a checkpoint path
    seed: int = 1001
    input_mean: tuple[float, float, float] = (0.5, 0.5, 0.5)
    input_std: tuple[float, float, float] = (0.25, 0.25, 0.25)

    def __post_init__(self):
        if not 2 <= len(self.stage_channels) <= 4:
            raise ShapeError(f"backbone needs 2..4 stages, got {len(self.stage_channels)}")
        if len(self.stage_strides) != len(self.stage_channels):
            raise ShapeError("stage_strides and stage_channels length mismatch")
        if any(s not in range(len(self.stage_channels)) for s in self.selected_stages):
            raise ShapeError(f"selected_stages {self.selected_stages} out of range")

    @property
    def embed_channels(self) -> int:
        return sum(self.stage_channels[i] for i in self.selected_stages)


def resnet50like_spec(seed: int = 1001) -> BackboneSpec:
    return BackboneSpec(
        name="resnet50like",
        stage_channels=(256, 512, 1024),
        stage_strides=(4, 8, 16),
        seed=seed,
    )


@dataclass
class FeatureStack:
    """C x H0 x W0 feature currency (batched variants carry a leading dim)."""

    data: Tensor
    origin: str

    def __post_init__(self):
        if self.origin not in FEATURE_ORIGINS:
            raise ValueError(f"unknown feature origin {self.origin!r}")

    @property
    def shape(self):
        return self.data.shape


class _Stage(Module):
    """Chain of 3x3 stride-2 convs + ReLU realizing one stage's stride ratio."""

    def __init__(self, rng, c_in: int, c_out: int, ratio: int, dtype):
        if ratio < 1 or (ratio & (ratio - 1)):
            raise ShapeError(f"stage stride ratio {ratio} must be a power of two")
        n = max(1, int(np.log2(ratio)))
        self.convs = []
        c = c_in
        for _ in range(n):
            w = parameter(kaiming_normal(rng, (c_out, c, 3, 3), fan_in=c * 9, dtype=dtype))
            b = parameter(np.zeros(c_out, dtype=dtype))
            self.convs.append(_ConvPair(w, b))
            c = c_out

    def forward(self, x: Tensor) -> Tensor:
        for pair in self.convs:
            x = relu(nnops.conv2d(x, pair.w, pair.b, stride=2, padding=1))
        return x


class _ConvPair(Module):
    def __init__(self, w: Tensor, b: Tensor):
        self.w = w
        self.b = b


class Backbone(Module):
    def __init__(self, spec: BackboneSpec, dtype=np.float32):
        self.spec_meta = spec  # not a Tensor/Module: stays out of named_params
        rng = rng_from(spec.seed, "backbone", spec.name)
        self.mean = Tensor(np.asarray(spec.input_mean, dtype=dtype)[:, None, None])
        self.std = Tensor(np.asarray(spec.input_std, dtype=dtype)[:, None, None])
        self.stages = []
        c_prev, s_prev = 3, 1
        for c_out, s_out in zip(spec.stage_channels, spec.stage_strides):
            if s_out % s_prev:
                raise ShapeError(f"stage strides {spec.stage_strides} must be nested multiples")
            self.stages.append(_Stage(rng, c_prev, c_out, s_out // s_prev, dtype))
            c_prev, s_prev = c_out, s_out

    def forward(self, image: Tensor) -> list[Tensor]:
        """Stage maps at native strides for the selected stages."""
        spec = self.spec_meta
        h, w = image.shape[-2:]
        deepest = spec.stage_strides[-1]
        if h % deepest or w % deepest:
            raise ShapeError(f"input {h}x{w} not divisible by deepest stride {deepest}")
        # The image is a constant input to a frozen network; standardize with
        # the spec's fixed per-channel stats outside the autodiff graph.
        x = Tensor(((image.data - self.mean.data) / self.std.data).astype(image.dtype))
        maps = []
        for stage in self.stages:
            x = stage.forward(x)
            maps.append(x)
        return [maps[i] for i in spec.selected_stages]


class FeatureEmbedder:
    """Frozen backbone + resize-and-concat embedding onto the grid."""

    def __init__(self, spec: BackboneSpec, grid_size: int = 64, dtype=np.float32):
        self.spec = spec
        self.grid_size = grid_size
        self.backbone = Backbone(spec, dtype=dtype)
        if spec.weights_source not in ("builtin-random",):
            self.load_weights(spec.weights_source)
        for t in self.backbone.named_params().values():
            t.requires_grad = False

    def load_weights(self, path: str) -> None:
        from .checkpoint import load_checkpoint

        config, entries = load_checkpoint(path)
        own = self.backbone.named_params()
        missing = [k for k in own if f"backbone.{k}" not in entries]
        if missing:
            raise ShapeError(f"backbone checkpoint missing entries: {missing[:4]}")
        for key, t in own.items():
            arr = entries[f"backbone.{key}"]
            if arr.shape != t.data.shape:
                raise ShapeError(
                    f"backbone entry {key}: checkpoint shape {arr.shape} vs expected {t.data.shape}"
                )
            t.data = arr.astype(t.data.dtype)

    def backbone_forward(self, image: Tensor) -> list[Tensor]:
        return self.backbone.forward(image)

    def embed(self, image: Tensor) -> FeatureStack:
        return self._embed_tagged(image, "phi")

    def _embed_tagged(self, image: Tensor, origin: str) -> FeatureStack:
        maps = self.backbone_forward(image)
        g = self.grid_size
        resized = [nnops.bilinear_resize(m, g, g) for m in maps]
        axis = 0 if image.ndim == 3 else 1
        return FeatureStack(data=concat(resized, axis=axis), origin=origin)

    def dual_embed(self, image: Tensor, image_a: Tensor) -> tuple[FeatureStack, FeatureStack]:
        """Shared-weight embedding of the clean and augmented images."""
        if image.shape != image_a.shape:
            raise ShapeError(f"dual_embed: shapes {image.shape} vs {image_a.shape}")
        phi = self._embed_tagged(image, "phi")
        f_in = self._embed_tagged(image_a, "f_input")
        return phi, f_in

    def embed_channels(self) -> int:
        return self.spec.embed_channels
