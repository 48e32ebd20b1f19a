"""Dataset ingestion (category/train|test|ground_truth layouts), image I/O,
and the built-in procedural texture corpus generator."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import DataContractError
from .synth import SynthConfig, TextureBank, draw_synth_pair, render_texture, texture_params
from .utils import derive_seed, rng_from

RASTER_SUFFIXES = (".png", ".ppm", ".pgm", ".bmp", ".jpg", ".jpeg", ".tif", ".tiff")


# ---------------------------------------------------------------------------
# image I/O


def load_image(path, size: tuple[int, int] | None = None) -> np.ndarray:
    """Decode an 8-bit raster to (3, H, W) float32 in [0, 1]."""
    with Image.open(path) as im:
        im = im.convert("RGB")
        if size is not None and im.size != (size[1], size[0]):
            im = im.resize((size[1], size[0]), Image.BILINEAR)
        arr = np.asarray(im, dtype=np.float32) / 255.0
    return np.ascontiguousarray(arr.transpose(2, 0, 1))


def load_mask(path, size: tuple[int, int] | None = None) -> np.ndarray:
    """Grayscale mask binarized at half its dynamic range; (H, W) in {0,1}."""
    with Image.open(path) as im:
        im = im.convert("L")
        if size is not None and im.size != (size[1], size[0]):
            im = im.resize((size[1], size[0]), Image.NEAREST)
        arr = np.asarray(im, dtype=np.float32)
    lo, hi = float(arr.min()), float(arr.max())
    if hi <= lo:
        return np.zeros(arr.shape, dtype=np.float32)
    return ((arr - lo) / (hi - lo) >= 0.5).astype(np.float32)


def save_image(arr: np.ndarray, path) -> None:
    """Write (3, H, W) or (H, W) values in [0, 1] as an 8-bit PNG."""
    a = np.clip(np.asarray(arr, dtype=np.float64), 0.0, 1.0)
    u8 = np.rint(a * 255.0).astype(np.uint8)
    if u8.ndim == 3:
        Image.fromarray(u8.transpose(1, 2, 0), "RGB").save(path)
    else:
        Image.fromarray(u8, "L").save(path)


def heat_overlay(image: np.ndarray, scores: np.ndarray) -> np.ndarray:
    """Red-tinted overlay of a score map on an RGB image, for visualization."""
    heat = np.stack([scores, 0.15 * scores, 1.0 - scores], axis=0)
    return 0.55 * image + 0.45 * heat


# ---------------------------------------------------------------------------
# dataset handles


@dataclass
class DatasetItem:
    image_path: Path
    mask_path: Path | None
    label: int  # 0 anomaly-free, 1 anomalous


@dataclass
class DatasetHandle:
    root: Path
    image_size: int
    categories: list[str]
    train: dict[str, list[DatasetItem]]
    test: dict[str, list[DatasetItem]]
    missing_masks: list[Path] = field(default_factory=list)

    def load(self, item: DatasetItem) -> tuple[np.ndarray, np.ndarray | None]:
        size = (self.image_size, self.image_size)
        img = load_image(item.image_path, size)
        mask = None if item.mask_path is None else load_mask(item.mask_path, size)
        return img, mask


def _list_images(d: Path) -> list[Path]:
    return sorted(p for p in d.iterdir() if p.suffix.lower() in RASTER_SUFFIXES)


def _find_mask(gt_dir: Path, image: Path) -> Path | None:
    for cand in (
        gt_dir / f"{image.stem}_mask.png",
        gt_dir / f"{image.stem}.png",
        gt_dir / image.name,
    ):
        if cand.exists():
            return cand
    return None


def ingest(root, layout: str = "mvtec", image_size: int = 256,
           categories: list[str] | None = None) -> DatasetHandle:
    """Walk a dataset tree into a handle.

    mvtec layout: <cat>/train/good/*, <cat>/test/<defect>/*,
    <cat>/ground_truth/<defect>/*_mask.png. flat layout: <cat>/train/*,
    <cat>/test/*, <cat>/masks/* (an existing mask marks a test image
    anomalous).
    """
    root = Path(root)
    if not root.is_dir():
        raise DataContractError(f"dataset root {root} does not exist")
    if layout not in ("mvtec", "flat"):
        raise DataContractError(f"unknown layout {layout!r}")
    cats = categories or sorted(p.name for p in root.iterdir() if p.is_dir())
    if not cats:
        raise DataContractError(f"no category directories under {root}")
    train: dict[str, list[DatasetItem]] = {}
    test: dict[str, list[DatasetItem]] = {}
    missing: list[Path] = []
    for cat in cats:
        cdir = root / cat
        if layout == "mvtec":
            tdir = cdir / "train"
            if not tdir.is_dir():
                raise DataContractError(f"{cdir} has no train/ directory")
            extra = [p.name for p in tdir.iterdir() if p.is_dir() and p.name != "good"]
            if extra:
                raise DataContractError(
                    f"train split of {cat!r} must contain only good/ (anomaly-free); found {extra}"
                )
            train[cat] = [DatasetItem(p, None, 0) for p in _list_images(tdir / "good")]
            test[cat] = []
            test_dir = cdir / "test"
            if test_dir.is_dir():
                for defect_dir in sorted(p for p in test_dir.iterdir() if p.is_dir()):
                    is_good = defect_dir.name == "good"
                    gt_dir = cdir / "ground_truth" / defect_dir.name
                    for img in _list_images(defect_dir):
                        if is_good:
                            test[cat].append(DatasetItem(img, None, 0))
                            continue
                        mask = _find_mask(gt_dir, img) if gt_dir.is_dir() else None
                        if mask is None:
                            missing.append(img)
                        test[cat].append(DatasetItem(img, mask, 1))
        else:
            train[cat] = [DatasetItem(p, None, 0) for p in _list_images(cdir / "train")]
            test[cat] = []
            mask_dir = cdir / "masks"
            for img in _list_images(cdir / "test"):
                mask = _find_mask(mask_dir, img) if mask_dir.is_dir() else None
                test[cat].append(DatasetItem(img, mask, 0 if mask is None else 1))
        if not train[cat]:
            raise DataContractError(f"category {cat!r} has an empty train split")
    return DatasetHandle(
        root=root,
        image_size=image_size,
        categories=list(cats),
        train=train,
        test=test,
        missing_masks=missing,
    )


# ---------------------------------------------------------------------------
# built-in synthetic corpus

CORPUS_CATEGORIES = ("stripes", "checker", "noise")


def category_texture_params(cat: str, corpus_seed: int) -> dict:
    """Each category is ONE texture: its identity is drawn once per corpus."""
    return texture_params(cat, rng_from(corpus_seed, "category-identity", cat))


def _category_normal(cat: str, params: dict, seed: int, h: int, w: int) -> np.ndarray:
    """One normal image: the category texture under small per-image jitter."""
    rng = rng_from(seed, "normal", cat)
    img = render_texture(cat, params, rng, h, w)
    img += rng.normal(0.0, 0.015, size=img.shape).astype(np.float32)
    return np.clip(img, 0.0, 1.0)


def make_synth_corpus(
    out_dir,
    seed: int,
    image_size: int = 128,
    n_train: int = 64,
    n_test_good: int = 20,
    n_test_anomalous: int = 20,
    categories=CORPUS_CATEGORIES,
) -> Path:
    """Write a seed-deterministic 3-category corpus in the mvtec layout.

    Anomalous test images are normal images with defects injected from the
    *other* texture families, drawn from a held-out seed stream so training-
    time synthesis never sees the same draws.
    """
    out = Path(out_dir)
    h = w = image_size
    synth_cfg = SynthConfig()
    for cat in categories:
        params = category_texture_params(cat, seed)
        (out / cat / "train" / "good").mkdir(parents=True, exist_ok=True)
        (out / cat / "test" / "good").mkdir(parents=True, exist_ok=True)
        (out / cat / "test" / "synthetic").mkdir(parents=True, exist_ok=True)
        (out / cat / "ground_truth" / "synthetic").mkdir(parents=True, exist_ok=True)
        for i in range(n_train):
            img = _category_normal(cat, params, derive_seed(seed, cat, "train", i), h, w)
            save_image(img, out / cat / "train" / "good" / f"{i:03d}.png")
        for i in range(n_test_good):
            img = _category_normal(cat, params, derive_seed(seed, cat, "test-good", i), h, w)
            save_image(img, out / cat / "test" / "good" / f"{i:03d}.png")
        other = tuple(c for c in categories if c != cat) or categories
        bank = TextureBank(config=synth_cfg, families=other)
        for i in range(n_test_anomalous):
            base = _category_normal(cat, params, derive_seed(seed, cat, "test-anom-base", i), h, w)
            pair = draw_synth_pair(base, synth_cfg, bank, derive_seed(seed, cat, "held-out", i))
            save_image(pair.image_a, out / cat / "test" / "synthetic" / f"{i:03d}.png")
            save_image(pair.mask, out / cat / "ground_truth" / "synthetic" / f"{i:03d}_mask.png")
    return out
