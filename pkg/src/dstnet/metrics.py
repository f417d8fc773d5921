"""Full-reference (PSNR, SSIM, pluggable LPIPS) and no-reference (LOE, DE, EME)
image quality metrics.

Images are ``(H, W, 3)`` arrays or ``(3, H, W)`` tensors in [0, 1]. DE here is
base-2 entropy over 256 luma bins; expect ~7 bits on natural images, which is
not on the same scale as some published tables.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Protocol, Sequence

import numpy as np
import torch

from . import kernels
from .color import LUMA_WEIGHTS
from .losses import ssim as _ssim

PSNR_CAP = 120.0
EME_BLOCK = 8
EME_EPS = 1e-4
LOE_MAX_SIDE = 100
COLUMNS = ("image", "ssim", "psnr", "lpips", "loe", "de", "eme")


def as_hwc(img) -> np.ndarray:
    """Float64 (H, W, 3) view of an array or a (3, H, W) tensor."""
    if isinstance(img, torch.Tensor):
        img = img.detach().cpu().numpy()
        if img.ndim == 3 and img.shape[0] in (1, 3) and img.shape[-1] not in (1, 3):
            img = img.transpose(1, 2, 0)
    return np.asarray(img, dtype=np.float64)


def _pair(est, gt):
    est, gt = as_hwc(est), as_hwc(gt)
    if est.shape != gt.shape:
        raise ValueError(f"shape mismatch: {est.shape} vs {gt.shape}")
    return est, gt


def luma(img) -> np.ndarray:
    img = as_hwc(img)
    return img @ np.asarray(LUMA_WEIGHTS)


def psnr(est, gt) -> float:
    est, gt = _pair(est, gt)
    mse = float(np.mean((est - gt) ** 2))
    if mse < 1e-12:
        return PSNR_CAP
    return 10.0 * math.log10(1.0 / mse)


def ssim_metric(est, gt) -> float:
    """Mean single-scale SSIM on luma; equals ``1 - ssim_loss(variant='ssim')``."""
    est, gt = _pair(est, gt)
    t = lambda a: torch.from_numpy(a.transpose(2, 0, 1)).unsqueeze(0)  # noqa: E731
    return float(_ssim(t(est), t(gt))[0])


def _nearest_downsample(x: np.ndarray, max_side: int) -> np.ndarray:
    h, w = x.shape
    scale = max_side / max(h, w)
    if scale >= 1:
        return x
    nh, nw = max(1, int(round(h * scale))), max(1, int(round(w * scale)))
    rows = (np.arange(nh) * h // nh).astype(int)
    cols = (np.arange(nw) * w // nw).astype(int)
    return x[np.ix_(rows, cols)]


def loe(enh, orig, max_side: int = LOE_MAX_SIDE) -> float:
    """Lightness order error.

    Lightness is the per-pixel max over RGB. After nearest downsampling to
    ``max_side``, counts ordered pairs ``(p, q)`` whose ``>=`` relation differs
    between the images and divides by the pixel count.
    """
    enh, orig = _pair(enh, orig)
    le = _nearest_downsample(enh.max(axis=2), max_side).ravel()
    lo = _nearest_downsample(orig.max(axis=2), max_side).ravel()
    return kernels.loe_flip_count(np.ascontiguousarray(le), np.ascontiguousarray(lo)) / le.size


def de(img) -> float:
    q = np.clip(np.rint(luma(img) * 255.0), 0, 255).astype(np.int64)
    hist = np.bincount(q.ravel(), minlength=256).astype(np.float64)
    p = hist[hist > 0] / q.size
    return float(-(p * np.log2(p)).sum()) + 0.0


def eme(img, block: int = EME_BLOCK, eps: float = EME_EPS) -> float:
    tiles = kernels.eme_tiles(np.ascontiguousarray(luma(img)), block, eps)
    return float(tiles.mean())


class PerceptualExtractor(Protocol):
    """Supplies per-layer activations and per-channel layer weights."""

    def features(self, img: torch.Tensor) -> Sequence[torch.Tensor]: ...

    def layer_weights(self) -> Sequence[torch.Tensor]: ...


def lpips_plugin(est, gt, extractor: PerceptualExtractor | None) -> float | None:
    """Weighted distance of unit-normalized features, averaged over layers.

    Returns None when no extractor is supplied.
    """
    if extractor is None:
        return None
    if not hasattr(extractor, "features") or not hasattr(extractor, "layer_weights"):
        raise TypeError("extractor must provide features() and layer_weights()")
    est, gt = _pair(est, gt)
    t = lambda a: torch.from_numpy(a.transpose(2, 0, 1)).unsqueeze(0)  # noqa: E731
    fa, fb = extractor.features(t(est)), extractor.features(t(gt))
    weights = extractor.layer_weights()
    if not (len(fa) == len(fb) == len(weights)):
        raise ValueError("extractor layer count and weight count differ")
    dists = []
    for a, b, w in zip(fa, fb, weights):
        na = a / (a.norm(dim=1, keepdim=True) + 1e-10)
        nb = b / (b.norm(dim=1, keepdim=True) + 1e-10)
        diff = (na - nb) ** 2 * w.view(1, -1, 1, 1).to(a.dtype)
        dists.append(diff.sum(dim=1).mean())
    return float(torch.stack(dists).mean())


@dataclass
class ImageScores:
    image: str
    ssim: float
    psnr: float
    lpips: float | None
    loe: float
    de: float
    eme: float


@dataclass
class MetricReport:
    per_image: list[ImageScores] = field(default_factory=list)

    def aggregate(self) -> dict:
        if not self.per_image:
            raise ValueError("empty report")
        out: dict = {"image": "mean"}
        for col in COLUMNS[1:]:
            vals = [getattr(s, col) for s in self.per_image]
            out[col] = None if any(v is None for v in vals) else float(np.mean(vals))
        return out

    def rows(self) -> list[dict]:
        return [asdict(s) for s in self.per_image] + [self.aggregate()]

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=COLUMNS)
            writer.writeheader()
            for row in self.rows():
                writer.writerow({k: ("" if v is None else v) for k, v in row.items()})

    def write_json(self, path) -> None:
        payload = {"per_image": [asdict(s) for s in self.per_image], "aggregate": self.aggregate()}
        with open(path, "w") as fh:
            json.dump(payload, fh, indent=2)


def score_image(name, est, gt, loe_ref, lpips_extractor: PerceptualExtractor | None = None) -> ImageScores:
    return ImageScores(
        image=name,
        ssim=ssim_metric(est, gt),
        psnr=psnr(est, gt),
        lpips=lpips_plugin(est, gt, lpips_extractor),
        loe=loe(est, loe_ref),
        de=de(est),
        eme=eme(est),
    )


def evaluate(triples, lpips_extractor=None, on_image: Callable | None = None) -> MetricReport:
    """Score ``(name, est, gt, loe_ref)`` items into a report."""
    report = MetricReport()
    for name, est, gt, ref in triples:
        scores = score_image(name, est, gt, ref, lpips_extractor)
        report.per_image.append(scores)
        if on_image:
            on_image(scores)
    return report
