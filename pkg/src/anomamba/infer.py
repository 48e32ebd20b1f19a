"""Inference (heatmap emission) and dataset evaluation."""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from .data import DatasetHandle, heat_overlay, load_image, save_image
from .errors import DataContractError
from .metrics import CategoryReport, average_report, evaluate_category, image_score
from .model import Pipeline


def _batched_scores(pipe: Pipeline, images: list[np.ndarray]) -> list[np.ndarray]:
    out: list[np.ndarray] = []
    bs = max(1, pipe.cfg.batch_size)
    for start in range(0, len(images), bs):
        chunk = np.stack(images[start : start + bs])
        out.extend(pipe.score_images(chunk))
    return out


def infer_paths(
    pipe: Pipeline,
    paths: list[Path],
    out_dir,
    overlay: bool = False,
) -> Path:
    """Score images, write grayscale heatmaps (+ optional overlays) and a CSV."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    size = (pipe.cfg.image_size, pipe.cfg.image_size)
    images = [load_image(p, size) for p in paths]
    scores = _batched_scores(pipe, images)
    csv_path = out / "scores.csv"
    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["image_id", "image_score"])
        for p, img, smap in zip(paths, images, scores):
            save_image(smap, out / f"{p.stem}_heatmap.png")
            if overlay:
                save_image(heat_overlay(img, smap), out / f"{p.stem}_overlay.png")
            writer.writerow([p.stem, f"{image_score(smap, pipe.cfg.image_score_mode):.8f}"])
    return csv_path


def collect_images(target) -> list[Path]:
    target = Path(target)
    if target.is_dir():
        from .data import RASTER_SUFFIXES

        paths = sorted(p for p in target.iterdir() if p.suffix.lower() in RASTER_SUFFIXES)
        if not paths:
            raise DataContractError(f"no raster images in {target}")
        return paths
    if not target.exists():
        raise DataContractError(f"{target} does not exist")
    return [target]


def evaluate_handle(
    pipe_for_category,
    handle: DatasetHandle,
    categories: list[str] | None = None,
) -> list[CategoryReport]:
    """Evaluate per category and append the unweighted 'avg' row.

    ``pipe_for_category`` maps a category name to its trained Pipeline
    (per-category models are the norm for this dataset layout).
    """
    cats = categories or handle.categories
    reports = []
    for cat in cats:
        pipe = pipe_for_category(cat)
        items = handle.test[cat]
        if not items:
            raise DataContractError(f"category {cat!r} has an empty test split")
        loaded = [handle.load(it) for it in items]
        scores = _batched_scores(pipe, [img for img, _ in loaded])
        triples = [
            (smap, mask, it.label)
            for smap, (_, mask), it in zip(scores, loaded, items)
        ]
        reports.append(evaluate_category(cat, triples, pipe.cfg.image_score_mode))
    reports.append(average_report(reports))
    return reports
