"""Ranking metrics and per-category evaluation reports."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import MetricUndefinedError


@dataclass
class ScoredSet:
    scores: np.ndarray
    labels: np.ndarray
    level: str = "pixel"  # or "image"

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=np.float64).ravel()
        self.labels = np.asarray(self.labels).ravel().astype(np.int64)
        if self.scores.shape != self.labels.shape:
            raise ValueError("scores and labels must have equal length")
        if not np.all((self.labels == 0) | (self.labels == 1)):
            raise ValueError("labels must be 0/1")


@dataclass
class CategoryReport:
    category: str
    image_auroc: float
    pixel_auroc: float
    pixel_ap: float
    n_images: int
    skipped: int = 0


def _midranks(scores: np.ndarray) -> np.ndarray:
    order = np.argsort(scores, kind="mergesort")
    ranks = np.empty(len(scores), dtype=np.float64)
    sorted_scores = scores[order]
    i = 0
    n = len(scores)
    while i < n:
        j = i
        while j + 1 < n and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0  # average of 1-based ranks
        i = j + 1
    return ranks


def auroc(s: ScoredSet) -> float:
    """Rank-based AUROC: P(pos > neg) + 0.5 * P(pos == neg) via midranks."""
    n_pos = int(s.labels.sum())
    n_neg = len(s.labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise MetricUndefinedError(
            f"AUROC undefined: {n_pos} positives, {n_neg} negatives"
        )
    ranks = _midranks(s.scores)
    return float((ranks[s.labels == 1].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def average_precision(s: ScoredSet) -> float:
    """Step-wise AP over descending unique thresholds with grouped ties."""
    n_pos = int(s.labels.sum())
    if n_pos == 0:
        raise MetricUndefinedError("AP undefined: no positives")
    order = np.argsort(-s.scores, kind="mergesort")
    sorted_scores = s.scores[order]
    sorted_labels = s.labels[order]
    tp = np.cumsum(sorted_labels)
    ranks = np.arange(1, len(tp) + 1)
    # Indices where a tie group ends (last occurrence of each distinct score).
    ends = np.nonzero(np.append(sorted_scores[1:] != sorted_scores[:-1], True))[0]
    precision = tp[ends] / ranks[ends]
    recall = tp[ends] / n_pos
    prev = np.concatenate([[0.0], recall[:-1]])
    return float(((recall - prev) * precision).sum())


def image_score(scores: np.ndarray, mode: str = "max", top_k: int = 100) -> float:
    """Collapse a score map to an image-level score (max or mean of top-k)."""
    flat = np.asarray(scores, dtype=np.float64).ravel()
    if mode == "max":
        return float(flat.max())
    if mode == "topk":
        k = min(top_k, flat.size)
        return float(np.sort(flat)[-k:].mean())
    raise ValueError(f"unknown image_score mode {mode!r}")


def evaluate_category(
    category: str,
    per_image: list[tuple[np.ndarray, np.ndarray | None, int]],
    score_mode: str = "max",
) -> CategoryReport:
    """Metrics over one category's (score_map, gt_mask, label) triples.

    Pixel metrics pool every test pixel; anomaly-free images contribute
    all-negative masks. Anomalous images without a mask are skipped and
    counted.
    """
    img_scores, img_labels = [], []
    pix_scores, pix_labels = [], []
    skipped = 0
    for score_map, mask, label in per_image:
        if label == 1 and mask is None:
            skipped += 1
            continue
        img_scores.append(image_score(score_map, score_mode))
        img_labels.append(label)
        m = np.zeros_like(score_map) if mask is None else mask
        pix_scores.append(score_map.ravel())
        pix_labels.append((m > 0.5).astype(np.int64).ravel())
    if not img_scores:
        raise MetricUndefinedError(f"category {category!r} has no scorable images")
    pix = ScoredSet(np.concatenate(pix_scores), np.concatenate(pix_labels), "pixel")
    img = ScoredSet(np.asarray(img_scores), np.asarray(img_labels), "image")
    return CategoryReport(
        category=category,
        image_auroc=auroc(img),
        pixel_auroc=auroc(pix),
        pixel_ap=average_precision(pix),
        n_images=len(img_scores),
        skipped=skipped,
    )


def average_report(reports: list[CategoryReport]) -> CategoryReport:
    """Unweighted mean across categories, in the shape of an 'avg' row."""
    return CategoryReport(
        category="avg",
        image_auroc=float(np.mean([r.image_auroc for r in reports])),
        pixel_auroc=float(np.mean([r.pixel_auroc for r in reports])),
        pixel_ap=float(np.mean([r.pixel_ap for r in reports])),
        n_images=sum(r.n_images for r in reports),
        skipped=sum(r.skipped for r in reports),
    )


def report_csv(reports: list[CategoryReport]) -> str:
    lines = ["category,image_auroc,pixel_auroc,pixel_ap,n_images"]
    for r in reports:
        lines.append(
            f"{r.category},{r.image_auroc:.6f},{r.pixel_auroc:.6f},{r.pixel_ap:.6f},{r.n_images}"
        )
    return "\n".join(lines) + "\n"


def report_table(reports: list[CategoryReport]) -> str:
    header = f"{'category':<16}{'image AUROC':>12}{'pixel AUROC':>12}{'pixel AP':>10}{'images':>8}"
    rows = [header, "-" * len(header)]
    for r in reports:
        rows.append(
            f"{r.category:<16}{r.image_auroc:>12.4f}{r.pixel_auroc:>12.4f}{r.pixel_ap:>10.4f}{r.n_images:>8}"
        )
    return "\n".join(rows)
