"""Cross-modal windowed attention and lightweight channel attention (TFEB)."""
from __future__ import annotations

import math

import torch
import torch.nn.functional as F
from torch import nn


def pad_to_multiple(x: torch.Tensor, multiple: int) -> tuple[torch.Tensor, int, int]:
    """Pad the last two axes up to a multiple; reflect where the size allows it."""
    h, w = x.shape[-2:]
    ph, pw = (-h) % multiple, (-w) % multiple
    if ph == 0 and pw == 0:
        return x, 0, 0
    mode = "reflect" if ph < h and pw < w else "replicate"
    return F.pad(x, (0, pw, 0, ph), mode=mode), ph, pw


def to_windows(x: torch.Tensor, window: int) -> torch.Tensor:
    """(N,C,H,W) -> (N*nH*nW, window*window, C) tokens, row-major inside a window."""
    n, c, h, w = x.shape
    x = x.view(n, c, h // window, window, w // window, window)
    return x.permute(0, 2, 4, 3, 5, 1).reshape(-1, window * window, c)


def from_windows(tokens: torch.Tensor, n: int, c: int, h: int, w: int, window: int) -> torch.Tensor:
    x = tokens.view(n, h // window, w // window, window, window, c)
    return x.permute(0, 5, 1, 3, 2, 4).reshape(n, c, h, w)


def cross_attention(x_img, x_feat, w_q, w_k, w_v, window: int, return_attn: bool = False):
    """Image tokens query guidance tokens inside non-overlapping windows.

    ``w_*`` are ``(C, C)`` matrices applied as ``tokens @ w``; the result is
    ``x_img + softmax(Q K^T / sqrt(C)) V`` on the original grid.
    """
    if x_img.shape != x_feat.shape:
        raise ValueError(f"stream shapes differ: {tuple(x_img.shape)} vs {tuple(x_feat.shape)}")
    n, c, h, w = x_img.shape
    xi, ph, pw = pad_to_multiple(x_img, window)
    xf, _, _ = pad_to_multiple(x_feat, window)
    hp, wp = xi.shape[-2:]
    ti, tf = to_windows(xi, window), to_windows(xf, window)
    q, k, v = ti @ w_q, tf @ w_k, tf @ w_v
    attn = torch.softmax(q @ k.transpose(-1, -2) / math.sqrt(c), dim=-1)
    mixed = from_windows(attn @ v, n, c, hp, wp, window)[..., :h, :w]
    out = x_img + mixed
    return (out, attn) if return_attn else out


class CrossAttention(nn.Module):
    def __init__(self, channels: int, window: int = 16):
        super().__init__()
        self.window = window
        bound = 1.0 / math.sqrt(channels)
        self.w_q = nn.Parameter(torch.empty(channels, channels).uniform_(-bound, bound))
        self.w_k = nn.Parameter(torch.empty(channels, channels).uniform_(-bound, bound))
        self.w_v = nn.Parameter(torch.empty(channels, channels).uniform_(-bound, bound))

    def forward(self, x_img, x_feat):
        return cross_attention(x_img, x_feat, self.w_q, self.w_k, self.w_v, self.window)


class ChannelLayerNorm(nn.Module):
    """LayerNorm over channels at every pixel, with affine."""

    def __init__(self, channels: int, eps: float = 1e-5):
        super().__init__()
        self.eps = eps
        self.weight = nn.Parameter(torch.ones(channels))
        self.bias = nn.Parameter(torch.zeros(channels))

    def forward(self, x):
        mu = x.mean(dim=1, keepdim=True)
        var = x.var(dim=1, keepdim=True, unbiased=False)
        xn = (x - mu) / torch.sqrt(var + self.eps)
        return xn * self.weight.view(1, -1, 1, 1) + self.bias.view(1, -1, 1, 1)


class LCA(nn.Module):
    """Lightweight channel attention: ``LN(x) * sigmoid(MLP(avg) + MLP(max))``."""

    def __init__(self, channels: int, reduction: int = 4):
        super().__init__()
        hidden = max(1, channels // reduction)
        self.norm = ChannelLayerNorm(channels)
        self.mlp = nn.Sequential(
            nn.Conv2d(channels, hidden, 1, bias=False),
            nn.ReLU(),
            nn.Conv2d(hidden, channels, 1, bias=False),
        )

    def gate(self, x):
        f_avg = x.mean(dim=(2, 3), keepdim=True)
        f_max = x.amax(dim=(2, 3), keepdim=True)
        return torch.sigmoid(self.mlp(f_avg) + self.mlp(f_max))

    def forward(self, x):
        return self.norm(x) * self.gate(x)


class TFEB(nn.Module):
    def __init__(self, channels: int, window: int = 16, reduction: int = 4):
        super().__init__()
        self.attn = CrossAttention(channels, window)
        self.lca = LCA(channels, reduction)

    def forward(self, x_img, x_feat):
        return self.lca(self.attn(x_img, x_feat))
