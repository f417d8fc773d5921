"""Dual-stream enhancer: guidance priors, U-shaped TFEB/MSFB streams, curve
estimation and residual reconstruction."""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field

import torch
import torch.nn.functional as F
from torch import nn

from .attention import TFEB, pad_to_multiple
from .msfb import MSFB
from .priors import TextureExtractor, extract_guidance

ABLATION_KEYS = ("color", "structure", "texture")


@dataclass
class ModelConfig:
    base_width: int = 32
    levels: int = 3
    curve_iters: int = 4
    attn_window: int = 16
    c_tex: int = 128
    lca_reduction: int = 4
    seed: int = 0

    def __post_init__(self):
        if self.curve_iters < 1:
            raise ValueError("curve_iters must be >= 1")
        if self.levels != 3:
            raise ValueError("only the 3-level layout is supported")
        if self.base_width < 3:
            raise ValueError("base_width must be >= 3 for the 3-D gradient stencils")

    @property
    def alignment(self) -> int:
        return 2 ** (self.levels - 1) * self.attn_window

    def config_hash(self) -> str:
        blob = json.dumps(asdict(self), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()


def apply_curves(img: torch.Tensor, curves) -> torch.Tensor:
    """``LE_n = LE_{n-1} + A_n * (LE_{n-1} - LE_{n-1}^2)`` for each map in turn."""
    le = img
    for a in curves:
        le = le + a * (le - le * le)
    return le


def split_curves(params: torch.Tensor, iters: int) -> list[torch.Tensor]:
    """(N, 3K, H, W) -> K maps of (N, 3, H, W)."""
    if params.shape[1] != 3 * iters:
        raise ValueError(f"expected {3 * iters} curve channels, got {params.shape[1]}")
    return list(params.split(3, dim=1))


@dataclass
class EnhanceOutput:
    image: torch.Tensor
    curve_stage: torch.Tensor
    curves: list[torch.Tensor]
    intermediates: dict[str, torch.Tensor] = field(default_factory=dict)


def _conv_gelu(cin, cout, stride=1):
    return nn.Sequential(nn.Conv2d(cin, cout, 3, stride=stride, padding=1), nn.GELU())


class Up(nn.Module):
    """Bilinear x2 followed by a 1x1 projection."""

    def __init__(self, cin, cout):
        super().__init__()
        self.proj = nn.Conv2d(cin, cout, 1)

    def forward(self, x, size):
        return self.proj(F.interpolate(x, size=size, mode="bilinear", align_corners=False))


class CurveHead(nn.Module):
    def __init__(self, channels: int, iters: int, reduction: int = 4):
        super().__init__()
        self.iters = iters
        self.boost = MSFB(channels, reduction)
        self.head = nn.Conv2d(channels, 3 * iters, 1)

    def forward(self, x_up, y_up):
        return split_curves(torch.tanh(self.head(self.boost(x_up + y_up))), self.iters)


class Reconstruction(nn.Module):
    """``sigmoid(Conv_out(M_end(Cat(X_out, Y_out, I_in, I_feat)) + I_curve))``."""

    def __init__(self, channels: int):
        super().__init__()
        self.m_end = nn.Sequential(
            nn.Conv2d(2 * channels + 6, channels, 3, padding=1),
            nn.GELU(),
            nn.Conv2d(channels, 3, 3, padding=1),
        )
        self.conv_out = nn.Conv2d(3, 3, 3, padding=1)

    def forward(self, x_out, y_out, img, i_feat, i_curve):
        f_fine = self.m_end(torch.cat((x_out, y_out, img, i_feat), dim=1))
        return torch.sigmoid(self.conv_out(f_fine + i_curve))


class DSTNet(nn.Module):
    def __init__(self, cfg: ModelConfig | None = None):
        super().__init__()
        cfg = cfg or ModelConfig()
        self.cfg = cfg
        c = cfg.base_width
        widths = (c, 2 * c, 4 * c)
        guide_ch = 2 + cfg.c_tex
        win, r = cfg.attn_window, cfg.lca_reduction
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(cfg.seed)
            self.extractor = TextureExtractor(cfg.c_tex, seed=cfg.seed)
            self.guide_proj = nn.Sequential(nn.Conv2d(guide_ch, c, 1), nn.GELU())
            self.img_in = nn.Conv2d(3, c, 3, padding=1)
            self.enc_tfeb = nn.ModuleList(TFEB(w, win, r) for w in widths)
            self.enc_msfb = nn.ModuleList(MSFB(w, r) for w in widths)
            self.img_down = nn.ModuleList(
                nn.Conv2d(widths[i], widths[i + 1], 3, stride=2, padding=1) for i in range(2)
            )
            self.feat_down = nn.ModuleList(_conv_gelu(widths[i], widths[i + 1], 2) for i in range(2))
            self.img_up = nn.ModuleList(Up(widths[i + 1], widths[i]) for i in (1, 0))
            self.feat_up = nn.ModuleList(Up(widths[i + 1], widths[i]) for i in (1, 0))
            self.dec_tfeb = nn.ModuleList(TFEB(w, win, r) for w in (widths[2], widths[1], widths[0]))
            self.x_out = _conv_gelu(c, c)
            self.y_out = _conv_gelu(c, c)
            self.curve_head = CurveHead(c, cfg.curve_iters, r)
            self.feat_rgb = nn.Conv2d(guide_ch, 3, 1)
            self.recon = Reconstruction(c)

    def param_groups(self) -> dict[str, list[nn.Parameter]]:
        """Trainable parameters grouped by role, for update inspection."""
        groups = {
            "priors": [*self.guide_proj.parameters(), *self.feat_rgb.parameters()],
            "attention": [*self.enc_tfeb.parameters(), *self.dec_tfeb.parameters()],
            "msfb": list(self.enc_msfb.parameters()),
            "curve": list(self.curve_head.parameters()),
            "reconstruction": list(self.recon.parameters()),
        }
        return groups

    def streams(self, img, guide):
        """Run both streams; returns (X_up^3, Y_up^3) at input resolution."""
        f = self.guide_proj(guide)
        y = self.img_in(img)
        feats, skips = [], []
        for level in range(3):
            y = self.enc_msfb[level](self.enc_tfeb[level](y, f))
            feats.append(f)
            skips.append(y)
            if level < 2:
                y = self.img_down[level](y)
                f = self.feat_down[level](f)
        # decoder level 1 (bottleneck), then two upsampling levels
        x_up = feats[2]
        y = self.dec_tfeb[0](y, x_up)
        for i, level in enumerate((1, 0)):
            size = skips[level].shape[-2:]
            x_up = self.feat_up[i](x_up, size) + feats[level]
            y = self.img_up[i](y, size) + skips[level]
            y = self.dec_tfeb[i + 1](y, x_up)
        return x_up, y

    def forward(self, img: torch.Tensor, ablation=None, keep_intermediates=False) -> EnhanceOutput:
        single = img.dim() == 3
        if single:
            img = img.unsqueeze(0)
        h, w = img.shape[-2:]
        padded, _, _ = pad_to_multiple(img, self.cfg.alignment)
        pack = extract_guidance(padded, self.extractor, ablation)
        x_up, y_up = self.streams(padded, pack.f_inv)
        curves = self.curve_head(x_up, y_up)
        i_curve = apply_curves(padded, curves)
        i_feat = self.feat_rgb(pack.f_inv)
        out = self.recon(self.x_out(x_up), self.y_out(y_up), padded, i_feat, i_curve)

        crop = lambda t: t[..., :h, :w]  # noqa: E731
        result = EnhanceOutput(crop(out), crop(i_curve), [crop(a) for a in curves])
        if keep_intermediates:
            result.intermediates = {
                "f_inv": crop(pack.f_inv),
                "x_up": crop(x_up),
                "y_up": crop(y_up),
                "i_feat": crop(i_feat),
            }
        if single:
            result.image = result.image[0]
            result.curve_stage = result.curve_stage[0]
            result.curves = [a[0] for a in result.curves]
        return result


def ablation_flags(color=True, structure=True, texture=True) -> dict[str, bool]:
    return {"color": color, "structure": structure, "texture": texture}
