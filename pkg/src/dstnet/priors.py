"""Illumination-independent guidance priors: structure, chroma and texture maps."""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .color import srgb_to_lab

SIGMA_FINE = 1.0
SIGMA_COARSE = 1.6
NORM_EPS = 1e-8
CHROMA_EPS = 1e-5

# extractor input standardization (ImageNet statistics)
TEXTURE_MEAN = (0.485, 0.456, 0.406)
TEXTURE_STD = (0.229, 0.224, 0.225)


class ExtractorError(RuntimeError):
    pass


@dataclass(frozen=True)
class GaussianKernel:
    sigma: float
    size: int
    weights: np.ndarray  # normalized, sums to 1
    raw: np.ndarray  # 1/(2 pi sigma^2) exp(-(x^2+y^2)/(2 sigma^2))


def gaussian_kernel(sigma: float, size: int) -> GaussianKernel:
    if sigma <= 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    if size < 3 or size % 2 == 0:
        raise ValueError(f"size must be odd and >= 3, got {size}")
    r = size // 2
    y, x = np.mgrid[-r : r + 1, -r : r + 1].astype(np.float64)
    raw = np.exp(-(x**2 + y**2) / (2.0 * sigma**2)) / (2.0 * math.pi * sigma**2)
    return GaussianKernel(sigma, size, raw / raw.sum(), raw)


def dog_kernel(sigma1: float = SIGMA_FINE, sigma2: float = SIGMA_COARSE) -> np.ndarray:
    """Zero-sum difference of two normalized Gaussians on a common support."""
    if not sigma1 < sigma2:
        raise ValueError("DoG needs sigma1 < sigma2")
    size = 2 * math.ceil(3 * sigma2) + 1
    return gaussian_kernel(sigma1, size).weights - gaussian_kernel(sigma2, size).weights


def minmax_normalize(x: torch.Tensor, eps: float = NORM_EPS) -> torch.Tensor:
    """Per-image min-max to [0, 1] over all but the batch axis; flat maps -> 0."""
    flat = x.reshape(x.shape[0], -1)
    lo = flat.min(dim=1).values.view(-1, *([1] * (x.dim() - 1)))
    hi = flat.max(dim=1).values.view(-1, *([1] * (x.dim() - 1)))
    span = hi - lo
    flat_img = span < eps
    out = (x - lo) / torch.where(flat_img, torch.ones_like(span), span)
    return torch.where(flat_img, torch.zeros_like(out), out)


def _batched(x: torch.Tensor, ndim: int) -> tuple[torch.Tensor, bool]:
    if x.dim() == ndim - 1:
        return x.unsqueeze(0), True
    return x, False


def dog_response(lightness: torch.Tensor, sigma1=SIGMA_FINE, sigma2=SIGMA_COARSE) -> torch.Tensor:
    """Signed DoG response with reflective borders, ``(N,1,H,W)`` in and out."""
    k = torch.as_tensor(dog_kernel(sigma1, sigma2), dtype=lightness.dtype, device=lightness.device)
    pad = k.shape[-1] // 2
    padded = F.pad(lightness, (pad, pad, pad, pad), mode="reflect")
    return F.conv2d(padded, k.view(1, 1, *k.shape))


def dog_feature(lightness: torch.Tensor, sigma1=SIGMA_FINE, sigma2=SIGMA_COARSE) -> torch.Tensor:
    """Normalized |L * (G_s1 - G_s2)| structure map.

    Accepts ``(H,W)``, ``(1,H,W)`` or ``(N,1,H,W)``; returns ``(N,1,H,W)``
    (or ``(1,H,W)`` for unbatched input).
    """
    if lightness.dim() == 2:
        lightness = lightness.unsqueeze(0)
    x, single = _batched(lightness, 4)
    out = minmax_normalize(dog_response(x, sigma1, sigma2).abs())
    return out[0] if single else out


def color_feature(lab: torch.Tensor) -> torch.Tensor:
    """Normalized chroma magnitude sqrt(a^2 + b^2 + 1e-5) from a LAB tensor."""
    x, single = _batched(lab, 4)
    a, b = x[:, 1:2], x[:, 2:3]
    out = minmax_normalize(torch.sqrt(a * a + b * b + CHROMA_EPS))
    return out[0] if single else out


class TextureExtractor(nn.Module):
    """Frozen four-layer conv stack standing in for a pretrained backbone.

    Widths ``(c/2, c/2, c, c)`` with two stride-2 stages, so the returned
    activation has ``c`` channels at 1/4 resolution before resizing back.
    """

    stride = 4
    min_size = 8

    def __init__(self, channels: int = 128, seed: int = 0):
        super().__init__()
        half = max(1, channels // 2)
        self.channels = channels
        self.widths = (3, half, half, channels, channels)
        self.strides = (1, 2, 1, 2)
        gen = torch.Generator().manual_seed(seed)
        layers = []
        for cin, cout, s in zip(self.widths[:-1], self.widths[1:], self.strides):
            conv = nn.Conv2d(cin, cout, 3, stride=s, padding=1)
            bound = 1.0 / math.sqrt(cin * 9)
            with torch.no_grad():
                conv.weight.uniform_(-bound, bound, generator=gen)
                conv.bias.uniform_(-bound, bound, generator=gen)
            layers.append(conv)
        self.convs = nn.ModuleList(layers)
        self.register_buffer("mean", torch.tensor(TEXTURE_MEAN).view(1, 3, 1, 1))
        self.register_buffer("std", torch.tensor(TEXTURE_STD).view(1, 3, 1, 1))
        self.requires_grad_(False)

    def manifest(self) -> list[dict]:
        return [
            {"cin": cin, "cout": cout, "kernel": 3, "stride": s}
            for cin, cout, s in zip(self.widths[:-1], self.widths[1:], self.strides)
        ]

    def preprocess(self, img: torch.Tensor) -> torch.Tensor:
        if img.shape[1] == 1:
            img = img.expand(-1, 3, -1, -1)
        if min(img.shape[-2:]) < self.min_size:
            raise ExtractorError(
                f"texture extractor needs at least {self.min_size}px, got {tuple(img.shape[-2:])}"
            )
        return (img - self.mean.to(img.dtype)) / self.std.to(img.dtype)

    def features(self, img: torch.Tensor) -> torch.Tensor:
        x = self.preprocess(img)
        for conv in self.convs:
            x = F.relu(conv(x))
        return x

    def forward(self, img: torch.Tensor) -> torch.Tensor:
        feats = self.features(img)
        return F.interpolate(feats, size=img.shape[-2:], mode="bilinear", align_corners=False)

    def save(self, path: str | Path) -> None:
        torch.save(
            {"kind": "texture_extractor", "layers": self.manifest(), "channels": self.channels,
             "params": self.state_dict()},
            path,
        )

    @classmethod
    def load(cls, path: str | Path) -> "TextureExtractor":
        try:
            blob = torch.load(path, map_location="cpu", weights_only=True)
        except Exception as exc:
            raise ExtractorError(f"cannot read extractor weights {path}: {exc}") from exc
        if not isinstance(blob, dict) or blob.get("kind") != "texture_extractor":
            raise ExtractorError(f"{path} is not an extractor weights file")
        ext = cls(channels=int(blob["channels"]))
        if ext.manifest() != blob["layers"]:
            raise ExtractorError(f"layer manifest in {path} does not match the extractor")
        ext.load_state_dict(blob["params"])
        return ext


def texture_feature(img: torch.Tensor, extractor: TextureExtractor) -> torch.Tensor:
    x, single = _batched(img, 4)
    out = extractor(x)
    return out[0] if single else out


@dataclass
class GuidancePack:
    f_dog: torch.Tensor
    f_color: torch.Tensor
    f_tex: torch.Tensor
    f_inv: torch.Tensor


def fuse_guidance(f_dog, f_color, f_tex) -> GuidancePack:
    sizes = {t.shape[-2:] for t in (f_dog, f_color, f_tex)}
    if len(sizes) != 1:
        raise ValueError(f"guidance maps disagree in spatial size: {sorted(sizes)}")
    return GuidancePack(f_dog, f_color, f_tex, torch.cat((f_dog, f_color, f_tex), dim=-3))


ABLATION_FILL = 1e-6


def extract_guidance(img: torch.Tensor, extractor: TextureExtractor, ablation=None) -> GuidancePack:
    """All three priors for a ``(N,3,H,W)`` batch.

    ``ablation`` maps ``color``/``structure``/``texture`` to False to replace
    that prior with the constant 1e-6 instead of dropping the channel.
    """
    ablation = ablation or {}
    lab = srgb_to_lab(img)
    f_dog = dog_feature(lab[:, :1])
    f_color = color_feature(lab)
    f_tex = texture_feature(img, extractor)
    if not ablation.get("structure", True):
        f_dog = torch.full_like(f_dog, ABLATION_FILL)
    if not ablation.get("color", True):
        f_color = torch.full_like(f_color, ABLATION_FILL)
    if not ablation.get("texture", True):
        f_tex = torch.full_like(f_tex, ABLATION_FILL)
    return fuse_guidance(f_dog, f_color, f_tex)
