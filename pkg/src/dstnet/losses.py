"""Composite training objective: pixel, SSIM, exposure, TV and HSV terms.

Every term takes ``(N,3,H,W)`` tensors in [0,1] and returns a scalar tensor.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import torch
import torch.nn.functional as F

from .color import TWO_PI, rgb_to_gray, rgb_to_hsv

log = logging.getLogger(__name__)

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_C1 = 0.01**2
SSIM_C2 = 0.03**2
MS_SSIM_WEIGHTS = (0.0448, 0.2856, 0.3001, 0.2363, 0.1333)
HUBER_DELTA = 0.01
EXPOSURE_PATCH = 16
TERMS = ("l1", "ssim", "exp", "tv", "hsv")


def _check_pair(est, gt):
    if est.shape != gt.shape:
        raise ValueError(f"shape mismatch: {tuple(est.shape)} vs {tuple(gt.shape)}")


def pixel_loss(est, gt, variant: str = "smooth_l1", delta: float = HUBER_DELTA):
    _check_pair(est, gt)
    d = (est - gt).abs()
    if variant == "l1":
        return d.mean()
    if variant == "smooth_l1":
        return torch.where(d < delta, d * d / (2 * delta), d - delta / 2).mean()
    raise ValueError(f"unknown pixel loss variant {variant!r}")


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA, dtype=torch.float64):
    """Normalized 2-D Gaussian as a ``(1,1,size,size)`` conv weight."""
    r = size // 2
    g = torch.exp(-(torch.arange(-r, r + 1, dtype=dtype) ** 2) / (2 * sigma**2))
    g = g / g.sum()
    return torch.outer(g, g).view(1, 1, size, size)


def _ssim_parts(x, y, window):
    """Mean SSIM and mean contrast-structure term over valid windows, per image."""
    w = window.to(x.dtype)
    mu_x, mu_y = F.conv2d(x, w), F.conv2d(y, w)
    sxx = F.conv2d(x * x, w) - mu_x**2
    syy = F.conv2d(y * y, w) - mu_y**2
    sxy = F.conv2d(x * y, w) - mu_x * mu_y
    cs = (2 * sxy + SSIM_C2) / (sxx + syy + SSIM_C2)
    lum = (2 * mu_x * mu_y + SSIM_C1) / (mu_x**2 + mu_y**2 + SSIM_C1)
    return (lum * cs).flatten(1).mean(1), cs.flatten(1).mean(1)


def ssim(est, gt, window_size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA):
    """Per-image mean single-scale SSIM on luma, shape ``(N,)``."""
    _check_pair(est, gt)
    if min(est.shape[-2:]) < window_size:
        raise ValueError(f"image smaller than the {window_size}px SSIM window")
    win = gaussian_window(window_size, sigma, est.dtype)
    return _ssim_parts(rgb_to_gray(est), rgb_to_gray(gt), win)[0]


def ms_ssim(est, gt, window_size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA, weights=MS_SSIM_WEIGHTS):
    """Multi-scale SSIM on luma, ``(N,)``.

    Drops the coarsest scales that would shrink below the window and
    renormalizes the remaining weights.
    """
    _check_pair(est, gt)
    side = min(est.shape[-2:])
    if side < window_size:
        raise ValueError(f"image smaller than the {window_size}px SSIM window")
    scales = 1
    while scales < len(weights) and side // 2**scales >= window_size:
        scales += 1
    w = torch.tensor(weights[:scales], dtype=est.dtype)
    w = w / w.sum()
    if scales < len(weights):
        log.debug("ms_ssim: %dpx input supports %d of %d scales", side, scales, len(weights))
    win = gaussian_window(window_size, sigma, est.dtype)
    x, y = rgb_to_gray(est), rgb_to_gray(gt)
    result = torch.ones(est.shape[0], dtype=est.dtype)
    for j in range(scales):
        s, cs = _ssim_parts(x, y, win)
        term = s if j == scales - 1 else cs
        result = result * term.clamp_min(0) ** w[j]
        if j < scales - 1:
            x, y = F.avg_pool2d(x, 2), F.avg_pool2d(y, 2)
    return result


def ssim_loss(est, gt, variant: str = "ms_ssim", window_size: int = SSIM_WINDOW):
    if variant == "ssim":
        return 1 - ssim(est, gt, window_size).mean()
    if variant == "ms_ssim":
        return 1 - ms_ssim(est, gt, window_size).mean()
    raise ValueError(f"unknown SSIM variant {variant!r}")


def region_means(gray, patch: int = EXPOSURE_PATCH):
    """Means of non-overlapping ``patch`` regions, edge remainders included."""
    h, w = gray.shape[-2:]
    ph, pw = (-h) % patch, (-w) % patch
    sums = F.avg_pool2d(F.pad(gray, (0, pw, 0, ph)), patch, divisor_override=1)
    ones = F.pad(torch.ones_like(gray), (0, pw, 0, ph))
    counts = F.avg_pool2d(ones, patch, divisor_override=1)
    return sums / counts


def exposure_loss(est, target: float = 0.6, patch: int = EXPOSURE_PATCH):
    return (region_means(rgb_to_gray(est), patch) - target).abs().mean()


def tv_loss(est):
    dx = est[..., :, 1:] - est[..., :, :-1]
    dy = est[..., 1:, :] - est[..., :-1, :]
    return (dx.pow(2).sum() + dy.pow(2).sum()) / est.numel()


def hue_distance(h1, h2):
    d = (h1 - h2).abs()
    return torch.minimum(d, TWO_PI - d)


def hsv_loss(est, gt, lambda_hue: float = 1.0, lambda_sat: float = 1.0):
    _check_pair(est, gt)
    he, se, _ = rgb_to_hsv(est).unbind(-3)
    hg, sg, _ = rgb_to_hsv(gt).unbind(-3)
    return (lambda_hue * hue_distance(hg, he) + lambda_sat * (sg - se).abs()).mean()


@dataclass
class LossWeights:
    w1: float = 1.0
    w2: float = 1.0
    w3: float = 0.1
    lambda_hue: float = 1.0
    lambda_sat: float = 1.0
    exposure: float = 0.6
    pixel_variant: str = "smooth_l1"
    ssim_variant: str = "ms_ssim"
    enabled: dict = field(default_factory=lambda: {t: True for t in TERMS})

    def __post_init__(self):
        for name in ("w1", "w2", "w3", "lambda_hue", "lambda_sat"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if not 0 < self.exposure < 1:
            raise ValueError("exposure target must lie in (0, 1)")
        unknown = set(self.enabled) - set(TERMS)
        if unknown:
            raise ValueError(f"unknown loss terms {sorted(unknown)}")
        self.enabled = {t: bool(self.enabled.get(t, True)) for t in TERMS}

    def coefficient(self, term: str) -> float:
        return {"l1": 1.0, "ssim": self.w1, "exp": self.w2, "tv": self.w3, "hsv": 1.0}[term]


def loss_terms(est, gt, w: LossWeights) -> dict[str, torch.Tensor]:
    """Unweighted value of every enabled term."""
    fns = {
        "l1": lambda: pixel_loss(est, gt, w.pixel_variant),
        "ssim": lambda: ssim_loss(est, gt, w.ssim_variant),
        "exp": lambda: exposure_loss(est, w.exposure),
        "tv": lambda: tv_loss(est),
        "hsv": lambda: hsv_loss(est, gt, w.lambda_hue, w.lambda_sat),
    }
    return {t: fns[t]() for t in TERMS if w.enabled[t]}


def total_loss(est, gt, w: LossWeights | None = None):
    """Weighted sum and the per-term breakdown.

    Disabled terms appear in the breakdown as ``None``.
    """
    w = w or LossWeights()
    terms = loss_terms(est, gt, w)
    total = sum((w.coefficient(t) * v for t, v in terms.items()), torch.zeros((), dtype=est.dtype))
    breakdown = {t: terms.get(t) for t in TERMS}
    return total, breakdown


def nonfinite_terms(breakdown) -> list[str]:
    return [t for t, v in breakdown.items() if v is not None and not math.isfinite(float(v.detach()))]
