"""Full pipeline assembly: frozen embedder + reconstructor (+ refiner).

Owns the ParamStore wiring and both forward paths:

  training   synthesize -> dual embed -> reconstruct -> refine -> losses
  inference  embed -> reconstruct -> refine (no synthesis ever)

Without the refiner, inference scores are the per-position channel L2
between the embedded and reconstructed features, upsampled to image size
and squashed monotonically into [0, 1).
"""

from __future__ import annotations

import numpy as np

from . import nnops
from .backbone import FeatureEmbedder, FeatureStack
from .checkpoint import load_checkpoint, load_into_store, save_checkpoint, store_entries
from .config import RunConfig, config_from_dict, config_to_dict
from .errors import ShapeError
from .params import ParamStore
from .recon import FeatureReconstructor
from .refine import AnomalyMap, RefineNet, channel_mean
from .tensor import Tensor, sqrt
from .utils import derive_seed


class Pipeline:
    def __init__(self, cfg: RunConfig):
        self.cfg = cfg
        dtype = cfg.dtype
        self.embedder = FeatureEmbedder(cfg.backbone, grid_size=cfg.grid_size, dtype=dtype)
        c_feat = cfg.backbone.embed_channels
        self.recon = FeatureReconstructor(
            cfg.recon, c_feat=c_feat, grid=cfg.grid_size, seed=derive_seed(cfg.seed, "recon-init"),
            dtype=dtype,
        )
        self.refiner = (
            RefineNet(
                cfg.refine,
                grid_size=cfg.grid_size,
                image_size=cfg.image_size,
                seed=derive_seed(cfg.seed, "refine-init"),
                dtype=dtype,
            )
            if cfg.refine_enabled
            else None
        )
        self.store = ParamStore()
        self.store.register_module("backbone", self.embedder.backbone, frozen=True)
        self.store.register_module("recon", self.recon)
        if self.refiner is not None:
            self.store.register_module("refine", self.refiner)

    # -- forward paths ---------------------------------------------------
    def embed_images(self, images: np.ndarray, origin: str = "phi") -> FeatureStack:
        return self.embedder._embed_tagged(Tensor(images.astype(self.cfg.dtype)), origin)

    def dual_embed_images(self, clean: np.ndarray, augmented: np.ndarray):
        dtype = self.cfg.dtype
        return self.embedder.dual_embed(
            Tensor(clean.astype(dtype)), Tensor(augmented.astype(dtype))
        )

    def reconstruct(self, stack: FeatureStack) -> FeatureStack:
        return self.recon.forward(stack)

    def refine_maps(self, f_in: FeatureStack, f_hat: FeatureStack) -> Tensor:
        if self.refiner is None:
            raise ShapeError("refiner is disabled in this configuration")
        return self.refiner.forward(channel_mean(f_in), channel_mean(f_hat))

    def score_images(self, images: np.ndarray) -> np.ndarray:
        """Inference scores for a (B, 3, H, W) batch -> (B, H, W) in [0, 1]."""
        if images.ndim != 4:
            raise ShapeError(f"score_images expects a batch, got {images.shape}")
        f_in = self.embed_images(images, "f_input")
        f_hat = self.reconstruct(f_in)
        if self.refiner is not None:
            maps = self.refine_maps(f_in, f_hat)
            return np.asarray(maps.data[:, 0], dtype=np.float64)
        # Refiner-free scoring: channel-vector L2 per grid position.
        d = f_hat.data - f_in.data
        dist = sqrt((d * d).sum(axis=1, keepdims=True))
        up = nnops.bilinear_resize(dist, self.cfg.image_size, self.cfg.image_size)
        raw = np.asarray(up.data[:, 0], dtype=np.float64)
        return raw / (1.0 + raw)  # monotone squash into [0, 1)

    def anomaly_maps(self, images: np.ndarray, ids: list[str] | None = None) -> list[AnomalyMap]:
        scores = self.score_images(images)
        ids = ids or ["" for _ in range(len(scores))]
        return [AnomalyMap(scores=s, source_image_id=i) for s, i in zip(scores, ids)]

    # -- serialization -----------------------------------------------------
    def save(self, path) -> None:
        config = {
            "run_config": config_to_dict(self.cfg),
            "step_count": self.store.step_count,
            "frozen": sorted(self.store.frozen),
            "kind": "pipeline",
        }
        save_checkpoint(store_entries(self.store), config, path)

    @classmethod
    def load(cls, path) -> "Pipeline":
        config, entries = load_checkpoint(path)
        if "run_config" not in config:
            raise ShapeError(f"checkpoint {path} carries no run_config")
        cfg = config_from_dict(config["run_config"])
        pipe = cls(cfg)
        try:
            load_into_store(pipe.store, entries, config)
        except Exception as exc:
            raise ShapeError(
                f"checkpoint {path} incompatible with config "
                f"(grid {cfg.grid_size}, channels {cfg.backbone.embed_channels}): {exc}"
            ) from exc
        return pipe
