"""Paired low/normal-light datasets, splitting, center cropping, synthetic pairs."""
from __future__ import annotations

import logging
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image as PILImage

log = logging.getLogger(__name__)

IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg", ".bmp")
DATA_ROOT_ENV = "DSTNET_DATA_ROOT"


class DatasetError(RuntimeError):
    pass


def load_image(path) -> np.ndarray:
    """Decode to float32 (H, W, 3) in [0, 1]."""
    try:
        with PILImage.open(path) as im:
            arr = np.asarray(im.convert("RGB"), dtype=np.float32)
    except (OSError, ValueError) as exc:
        raise DatasetError(f"cannot decode {path}: {exc}") from exc
    return arr / 255.0


def to_uint8(img: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(np.asarray(img) * 255.0), 0, 255).astype(np.uint8)


def save_image(path, img: np.ndarray) -> None:
    PILImage.fromarray(to_uint8(img)).save(path)


def _images(folder: Path) -> dict[str, Path]:
    return {p.name: p for p in sorted(folder.iterdir()) if p.suffix.lower() in IMAGE_SUFFIXES}


def discover_pairs(root, manifest=None) -> list[tuple[Path, Path]]:
    """``root/low/X`` paired with ``root/high/X``, or a manifest of
    ``low<TAB>gt`` lines (relative paths resolve against ``root``)."""
    root = Path(root)
    if not root.is_dir():
        raise DatasetError(f"dataset root not found: {root}")
    if manifest is not None:
        pairs = []
        for lineno, line in enumerate(Path(manifest).read_text().splitlines(), 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise DatasetError(f"{manifest}:{lineno}: expected 'low<TAB>gt'")
            pairs.append(tuple(root / p for p in parts))
        return pairs
    low, high = root / "low", root / "high"
    if not low.is_dir() or not high.is_dir():
        raise DatasetError(f"{root} needs low/ and high/ subdirectories or a manifest")
    lows, highs = _images(low), _images(high)
    missing = sorted(set(lows) - set(highs))
    if missing:
        raise DatasetError(f"no ground truth for {missing[:5]}")
    return [(lows[n], highs[n]) for n in sorted(lows)]


def holdout_count(n: int) -> int:
    return max(1, int(n / 10 + 0.5))


def split_dataset(pairs, seed: int = 0):
    """Deterministic shuffled 9:1 split -> (train, test)."""
    pairs = list(pairs)
    if len(pairs) < 2:
        raise DatasetError("need at least 2 pairs to split")
    order = np.random.default_rng(seed).permutation(len(pairs))
    k = holdout_count(len(pairs))
    test = [pairs[i] for i in sorted(order[:k])]
    train = [pairs[i] for i in sorted(order[k:])]
    return train, test


def center_crop_box(h: int, w: int, size: int) -> tuple[int, int, int, int]:
    top, left = (h - size) // 2, (w - size) // 2
    return top, top + size, left, left + size


def _pad_reflect(img: np.ndarray, size: int) -> np.ndarray:
    h, w = img.shape[:2]
    ph, pw = max(0, size - h), max(0, size - w)
    if ph == 0 and pw == 0:
        return img
    mode = "reflect" if ph < h and pw < w else "symmetric"
    return np.pad(img, ((ph // 2, ph - ph // 2), (pw // 2, pw - pw // 2), (0, 0)), mode=mode)


def preprocess(low: np.ndarray, gt: np.ndarray, crop: int = 192):
    """Aligned center crop of a pair; undersized images are reflect-padded first."""
    if low.shape != gt.shape:
        raise DatasetError(f"pair dimensions differ: {low.shape} vs {gt.shape}")
    low, gt = _pad_reflect(low, crop), _pad_reflect(gt, crop)
    r0, r1, c0, c1 = center_crop_box(low.shape[0], low.shape[1], crop)
    return low[r0:r1, c0:c1], gt[r0:r1, c0:c1]


@dataclass
class SplitView:
    """One split of a paired dataset; every read is appended to ``access_log``."""

    pairs: list
    tag: str
    crop: int | None = 192
    access_log: list = field(default_factory=list)
    _cache: dict = field(default_factory=dict, repr=False)

    def __len__(self):
        return len(self.pairs)

    def name(self, i: int) -> str:
        entry = self.pairs[i]
        return Path(entry[0]).name if not isinstance(entry[0], np.ndarray) else f"pair{i:04d}.png"

    def raw(self, i: int):
        self.access_log.append((self.tag, i))
        if i not in self._cache:
            lo, hi = self.pairs[i]
            lo = lo if isinstance(lo, np.ndarray) else load_image(lo)
            hi = hi if isinstance(hi, np.ndarray) else load_image(hi)
            if lo.shape != hi.shape:
                raise DatasetError(f"pair {self.name(i)} dimensions differ: {lo.shape} vs {hi.shape}")
            self._cache[i] = (lo.astype(np.float32), hi.astype(np.float32))
        return self._cache[i]

    def __getitem__(self, i: int):
        lo, hi = self.raw(i)
        if self.crop:
            lo, hi = preprocess(lo, hi, self.crop)
        return lo, hi


@dataclass
class PairedDataset:
    root: Path | None
    pairs: list
    seed: int = 0
    crop: int = 192

    @classmethod
    def from_root(cls, root, seed=0, crop=192, manifest=None):
        return cls(Path(root), discover_pairs(root, manifest), seed, crop)

    def split(self) -> tuple[SplitView, SplitView]:
        train, test = split_dataset(self.pairs, self.seed)
        # evaluation runs on full images
        return SplitView(train, "train", self.crop), SplitView(test, "test", None)


def default_root():
    return os.environ.get(DATA_ROOT_ENV)


def synthetic_clean(n: int, size: int = 32, seed: int = 0) -> list[np.ndarray]:
    """Smooth color fields with a few rectangles; mean brightness near 0.5."""
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:size, 0:size] / max(1, size - 1)
    images = []
    for _ in range(n):
        img = np.empty((size, size, 3))
        for c in range(3):
            a, b, ph = rng.uniform(-0.3, 0.3, 2).tolist() + [rng.uniform(0, 2 * np.pi)]
            img[..., c] = 0.5 + a * (xx - 0.5) + b * np.sin(2 * np.pi * yy + ph) * 0.5
        for _ in range(3):
            r0, c0 = rng.integers(0, size // 2, 2)
            hgt, wid = rng.integers(size // 6, size // 2, 2)
            img[r0 : r0 + hgt, c0 : c0 + wid] = rng.uniform(0.2, 0.9, 3)
        images.append(np.clip(img, 0.05, 0.95).astype(np.float32))
    return images


def darken(clean: np.ndarray, rng, gamma_range=(2.0, 4.0), max_noise=0.03) -> np.ndarray:
    """Gamma-darken then add Gaussian noise."""
    gamma = rng.uniform(*gamma_range)
    sigma = rng.uniform(0.0, max_noise)
    low = np.power(clean, gamma) + rng.normal(0.0, sigma, clean.shape)
    return np.clip(low, 0.0, 1.0).astype(np.float32)


def synthetic_pairs(n: int, size: int = 32, seed: int = 0, clean=None):
    rng = np.random.default_rng(seed + 1)
    clean = clean if clean is not None else synthetic_clean(n, size, seed)
    return [(darken(c, rng), c) for c in clean]


def write_pairs(root, pairs) -> Path:
    """Materialize pairs in the low/ + high/ layout."""
    root = Path(root)
    (root / "low").mkdir(parents=True, exist_ok=True)
    (root / "high").mkdir(parents=True, exist_ok=True)
    for i, (lo, hi) in enumerate(pairs):
        save_image(root / "low" / f"{i:04d}.png", lo)
        save_image(root / "high" / f"{i:04d}.png", hi)
    return root
