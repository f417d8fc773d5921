"""Color-space conversions on channel-first tensors.

All functions accept ``(..., 3, H, W)`` tensors with values in [0, 1] and are
differentiable with respect to their input.
"""
import math

import numpy as np
import torch

# sRGB primaries, D65 (IEC 61966-2-1)
_RGB_TO_XYZ = (
    (0.4124, 0.3576, 0.1805),
    (0.2126, 0.7152, 0.0722),
    (0.0193, 0.1192, 0.9505),
)
# reference white is the image of RGB (1,1,1), so grays map to a = b = 0
WHITE_XYZ = tuple(sum(row) for row in _RGB_TO_XYZ)

_LAB_DELTA = 6.0 / 29.0
LUMA_WEIGHTS = (0.299, 0.587, 0.114)
TWO_PI = 2.0 * math.pi


def _as_tensor(img):
    if isinstance(img, np.ndarray):
        img = torch.from_numpy(img)
    return img


def hwc_to_chw(img: np.ndarray) -> torch.Tensor:
    """(H, W, 3) array -> (3, H, W) tensor."""
    return torch.from_numpy(np.ascontiguousarray(np.asarray(img).transpose(2, 0, 1)))


def chw_to_hwc(t: torch.Tensor) -> np.ndarray:
    return t.detach().cpu().numpy().transpose(1, 2, 0)


def srgb_to_linear(c: torch.Tensor) -> torch.Tensor:
    c = c.clamp(0.0, 1.0)
    low = c / 12.92
    high = ((c + 0.055) / 1.055).clamp_min(1e-12) ** 2.4
    return torch.where(c <= 0.04045, low, high)


def linear_to_srgb(c: torch.Tensor) -> torch.Tensor:
    low = c * 12.92
    high = 1.055 * c.clamp_min(1e-12) ** (1.0 / 2.4) - 0.055
    return torch.where(c <= 0.0031308, low, high)


def _lab_f(t: torch.Tensor) -> torch.Tensor:
    cube = t.clamp_min(_LAB_DELTA**3) ** (1.0 / 3.0)
    lin = t / (3.0 * _LAB_DELTA**2) + 4.0 / 29.0
    return torch.where(t > _LAB_DELTA**3, cube, lin)


def srgb_to_lab(img) -> torch.Tensor:
    """sRGB -> CIELAB (D65). Returns ``(..., 3, H, W)`` with channels L, a, b."""
    img = _as_tensor(img)
    lin = srgb_to_linear(img)
    m = torch.tensor(_RGB_TO_XYZ, dtype=img.dtype, device=img.device)
    xyz = torch.einsum("ij,...jhw->...ihw", m, lin)
    white = torch.tensor(WHITE_XYZ, dtype=img.dtype, device=img.device).view(3, 1, 1)
    f = _lab_f(xyz / white)
    fx, fy, fz = f.unbind(-3)
    lightness = 116.0 * fy - 16.0
    a = 500.0 * (fx - fy)
    b = 200.0 * (fy - fz)
    return torch.stack((lightness, a, b), dim=-3)


def rgb_to_gray(img) -> torch.Tensor:
    """BT.601 luma, returned with a singleton channel axis ``(..., 1, H, W)``."""
    img = _as_tensor(img)
    w = torch.tensor(LUMA_WEIGHTS, dtype=img.dtype, device=img.device).view(3, 1, 1)
    return (img * w).sum(dim=-3, keepdim=True)


def rgb_to_hsv(img, eps: float = 1e-12) -> torch.Tensor:
    """Hexcone HSV with hue in radians in [0, 2*pi).

    Hue is 0 wherever saturation is 0, and carries no gradient there.
    """
    img = _as_tensor(img)
    r, g, b = img.unbind(-3)
    value, argmax = img.max(dim=-3)
    minimum = img.min(dim=-3).values
    delta = value - minimum
    chromatic = delta > eps
    safe_delta = torch.where(chromatic, delta, torch.ones_like(delta))
    safe_value = torch.where(value > eps, value, torch.ones_like(value))
    sat = torch.where(value > eps, delta / safe_value, torch.zeros_like(value))

    h_r = torch.remainder((g - b) / safe_delta, 6.0)
    h_g = (b - r) / safe_delta + 2.0
    h_b = (r - g) / safe_delta + 4.0
    sector = torch.where(argmax == 0, h_r, torch.where(argmax == 1, h_g, h_b))
    hue = torch.where(chromatic, sector * (math.pi / 3.0), torch.zeros_like(sector))
    # remainder can return exactly 6.0 for tiny negative inputs
    hue = torch.where(hue >= TWO_PI, hue - TWO_PI, hue)
    return torch.stack((hue, sat, value), dim=-3)


def hsv_to_rgb(hsv) -> torch.Tensor:
    """Inverse of :func:`rgb_to_hsv` (hue in radians)."""
    hsv = _as_tensor(hsv)
    h, s, v = hsv.unbind(-3)
    hp = torch.remainder(h, TWO_PI) / (math.pi / 3.0)
    c = v * s

    def channel(n):
        k = torch.remainder(n + hp, 6.0)
        return v - c * torch.clamp(torch.minimum(k, 4.0 - k), 0.0, 1.0)

    return torch.stack((channel(5.0), channel(3.0), channel(1.0)), dim=-3)
