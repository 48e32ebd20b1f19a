"""Training loop: per-step defect synthesis, dual embedding, reconstruction,
optional refinement, combined loss, Adam."""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import RunConfig
from .data import DatasetHandle
from .errors import NumericalError
from .losses import LossReport, rec_loss, total_loss
from .model import Pipeline
from .params import adam_step
from .synth import SynthConfig, TextureBank, draw_synth_pair
from .tensor import Tensor
from .utils import derive_seed, rng_from


@dataclass
class TrainResult:
    checkpoint_path: Path
    log_path: Path
    steps: int
    final_report: LossReport | None


def _limit_threads_if_strict(cfg: RunConfig):
    if not cfg.strict_deterministic:
        return None
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=1)


def train_category(
    cfg: RunConfig,
    handle: DatasetHandle,
    category: str,
    out_dir,
    progress=None,
) -> TrainResult:
    """Train one category's model; writes checkpoint(s) and a per-step CSV log."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    items = handle.train[category]
    if any(it.label != 0 for it in items):
        raise NumericalError("train split contains labeled anomalies")

    limiter = _limit_threads_if_strict(cfg)
    try:
        pipe = Pipeline(cfg)
        bank = TextureBank(config=cfg.synth)
        images = np.stack([handle.load(it)[0] for it in items])  # (N, 3, H, W)
        n = len(images)
        bs = min(cfg.batch_size, n)
        log_path = out / "train_log.csv"
        ckpt_path = out / "checkpoint.bin"
        step = 0
        report = None
        with open(log_path, "w") as log:
            log.write(LossReport.CSV_HEADER + "\n")
            for epoch in range(cfg.epochs):
                order = rng_from(cfg.seed, "epoch-order", category, epoch).permutation(n)
                for start in range(0, n - bs + 1, bs):
                    batch_idx = order[start : start + bs]
                    batch_seed = derive_seed(cfg.seed, "step", category, epoch, start)
                    report = train_step(pipe, images[batch_idx], bank, cfg.synth, batch_seed)
                    if not math.isfinite(report.l_total):
                        pipe.save(out / "diagnostic_dump.bin")
                        raise NumericalError(
                            f"non-finite loss at step {step} (batch seed {batch_seed}); "
                            f"diagnostic checkpoint written to {out / 'diagnostic_dump.bin'}"
                        )
                    adam_step(pipe.store, lr=cfg.lr)
                    log.write(report.csv_row(step) + "\n")
                    step += 1
                    if progress is not None:
                        progress(category, epoch, step, report)
                if cfg.checkpoint_every and (epoch + 1) % cfg.checkpoint_every == 0:
                    pipe.save(out / f"checkpoint_epoch{epoch + 1:04d}.bin")
        pipe.save(ckpt_path)
        return TrainResult(checkpoint_path=ckpt_path, log_path=log_path, steps=step, final_report=report)
    finally:
        if limiter is not None:
            limiter.__exit__(None, None, None)


def train_step(
    pipe: Pipeline,
    batch: np.ndarray,
    bank: TextureBank,
    synth_cfg: SynthConfig,
    batch_seed: int,
) -> LossReport:
    """One optimization step over an anomaly-free (B, 3, H, W) batch."""
    pairs = [
        draw_synth_pair(batch[i], synth_cfg, bank, derive_seed(batch_seed, "item", i))
        for i in range(len(batch))
    ]
    augmented = np.stack([p.image_a for p in pairs])
    masks = np.stack([p.mask for p in pairs]).astype(pipe.cfg.dtype)

    phi, f_in = pipe.dual_embed_images(batch, augmented)
    f_hat = pipe.reconstruct(f_in)
    l_rec = rec_loss(f_hat.data, phi.data)
    if pipe.refiner is not None:
        pred = pipe.refine_maps(f_in, f_hat)
        loss, report = total_loss(l_rec, pred.reshape(*masks.shape), masks)
    else:
        loss, report = total_loss(l_rec, None, None)
    pipe.store.zero_grad()
    loss.backward()
    return report
