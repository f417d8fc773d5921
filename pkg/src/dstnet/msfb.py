"""Multi-scale spatial fusion: 3-D gradient injection, pseudo-3D branches, MAFF.

Feature maps ``(N,C,H,W)`` are treated as single-channel volumes
``(N,1,C,H,W)`` for the 3-D operators, so depth runs along channels.
"""
from __future__ import annotations

import torch
import torch.nn.functional as F
from torch import nn

SCALES = (1, 3, 5, 7, 9)


def gradient_stencils(dtype=torch.float32) -> dict[str, torch.Tensor]:
    """Laplacian and Sobel kernels as ``(1,1,D,H,W)`` tensors keyed by axis.

    ``x`` is width, ``y`` height, ``z`` the channel (depth) axis.
    """
    second = torch.tensor([1.0, -2.0, 1.0], dtype=dtype)
    deriv = torch.tensor([-1.0, 0.0, 1.0], dtype=dtype)
    smooth = torch.tensor([1.0, 2.0, 1.0], dtype=dtype)
    outer = lambda d, h, w: torch.einsum("i,j,k->ijk", d, h, w)  # noqa: E731
    return {
        "lap_x": second.view(1, 1, 1, 1, 3),
        "lap_y": second.view(1, 1, 1, 3, 1),
        "lap_z": second.view(1, 1, 3, 1, 1),
        "sob_x": outer(smooth, smooth, deriv).view(1, 1, 3, 3, 3),
        "sob_y": outer(smooth, deriv, smooth).view(1, 1, 3, 3, 3),
        "sob_z": outer(deriv, smooth, smooth).view(1, 1, 3, 3, 3),
    }


def _conv_volume(vol, kernel):
    pad = tuple(s // 2 for s in kernel.shape[2:])
    return F.conv3d(vol, kernel.to(vol.dtype), padding=pad)


def p3d_gradients(x: torch.Tensor, stencils=None) -> tuple[torch.Tensor, torch.Tensor]:
    """``GELU(sum_d |X * K_d|)`` for the Laplacian and Sobel families."""
    if x.shape[1] < 3:
        raise ValueError(f"gradient stencils need at least 3 channels, got {x.shape[1]}")
    s = stencils or gradient_stencils(x.dtype)
    vol = x.unsqueeze(1)
    lap = sum(_conv_volume(vol, s[f"lap_{d}"]).abs() for d in "xyz")
    sob = sum(_conv_volume(vol, s[f"sob_{d}"]).abs() for d in "xyz")
    return F.gelu(lap.squeeze(1)), F.gelu(sob.squeeze(1))


class P3DBlock(nn.Module):
    """Pseudo-3D residual block at one scale ``k``.

    Plane kernels (depth, height, width): ch=(k,k,1), cw=(k,1,k),
    hw=(1,k,k), origin=(1,1,1). Their ReLU'd sum goes through a 3x3 conv,
    then a residual add and a final ReLU.
    """

    def __init__(self, channels: int, k: int):
        super().__init__()
        if k % 2 == 0:
            raise ValueError("scale must be odd")
        p = k // 2
        self.k = k
        self.conv_ch = nn.Conv3d(1, 1, (k, k, 1), padding=(p, p, 0))
        self.conv_cw = nn.Conv3d(1, 1, (k, 1, k), padding=(p, 0, p))
        self.conv_hw = nn.Conv3d(1, 1, (1, k, k), padding=(0, p, p))
        self.conv_o = nn.Conv3d(1, 1, 1)
        self.mix = nn.Conv2d(channels, channels, 3, padding=1)

    def forward(self, x):
        vol = x.unsqueeze(1)
        planes = sum(
            F.relu(conv(vol)) for conv in (self.conv_ch, self.conv_cw, self.conv_hw, self.conv_o)
        )
        return F.relu(self.mix(planes.squeeze(1)) + x)


class ChannelAttention(nn.Module):
    def __init__(self, channels: int, reduction: int = 4):
        super().__init__()
        hidden = max(1, channels // reduction)
        self.fc1 = nn.Conv2d(channels, hidden, 1)
        self.fc2 = nn.Conv2d(hidden, channels, 1)

    def forward(self, x):
        z = x.mean(dim=(2, 3), keepdim=True)
        return x * torch.sigmoid(self.fc2(F.relu(self.fc1(z))))


class SpatialAttention(nn.Module):
    def __init__(self, kernel: int = 7):
        super().__init__()
        self.conv = nn.Conv2d(2, 1, kernel, padding=kernel // 2)

    def forward(self, x):
        pooled = torch.cat((x.mean(dim=1, keepdim=True), x.amax(dim=1, keepdim=True)), dim=1)
        return x * torch.sigmoid(self.conv(pooled))


class MAFF(nn.Module):
    """Five-branch attention fusion with per-pixel softmax branch weights."""

    n_branches = 5

    def __init__(self, channels: int, reduction: int = 4):
        super().__init__()
        self.local = nn.Conv2d(channels, channels, 3, padding=1)
        self.glob = nn.Conv2d(channels, channels, 1)
        self.channel_attn = ChannelAttention(channels, reduction)
        self.spatial_attn = SpatialAttention()
        self.rep = nn.ModuleList(nn.Conv2d(channels, channels, 1) for _ in range(self.n_branches))
        self.psi = nn.Conv2d(channels * self.n_branches, self.n_branches, 1)
        self.out = nn.Conv2d(channels, channels, 1)

    def branch_weights(self, branches):
        f_in = sum(branches)
        ctx = self.glob(f_in.mean(dim=(2, 3), keepdim=True))
        f_att = self.spatial_attn(self.channel_attn(F.relu(self.local(f_in) + ctx)))
        gated = [torch.sigmoid(rep(f_att)) * f for rep, f in zip(self.rep, branches)]
        return torch.softmax(self.psi(torch.cat(gated, dim=1)), dim=1)

    def forward(self, branches):
        branches = list(branches)
        if len(branches) != self.n_branches:
            raise ValueError(f"MAFF expects {self.n_branches} branches, got {len(branches)}")
        if len({b.shape for b in branches}) != 1:
            raise ValueError("MAFF branches must share one shape")
        w = self.branch_weights(branches)
        fused = sum(w[:, i : i + 1] * f for i, f in enumerate(branches))
        return self.out(fused)


class MSFB(nn.Module):
    """Two-stage hierarchical fusion over five P3D scales plus gradient priors.

    The same five scale blocks are applied to ``x`` and then to ``H_1``.
    """

    def __init__(self, channels: int, reduction: int = 4, scales=SCALES):
        super().__init__()
        if channels < 3:
            raise ValueError("MSFB needs at least 3 channels")
        self.branches = nn.ModuleList(P3DBlock(channels, k) for k in scales)
        self.maff1 = MAFF(channels, reduction)
        self.maff2 = MAFF(channels, reduction)
        self.maff3 = MAFF(channels, reduction)
        self.conv_res = nn.Conv2d(channels, channels, 1)

    def fan_out(self, x):
        return [branch(x) for branch in self.branches]

    def forward(self, x):
        f_lap, f_sob = p3d_gradients(x)
        h1 = self.maff1(self.fan_out(x)) + f_lap + x
        h2 = self.maff2(self.fan_out(h1)) + f_sob + x + h1
        return self.maff3([h2, h1, f_lap, f_sob, x]) + F.gelu(self.conv_res(x))
