"""Speech encoder: four parallel strided convolutions and a stack of GroupMamba blocks.

Feature maps keep the layout (B, N_s, T_s, 4): channel, time, then one slot per
temporal scale. Each GroupMamba block scans scale i with its own direction.
"""

from __future__ import annotations

from typing import List, Sequence

import torch
import torch.nn as nn
import torch.nn.functional as F

from .config import ModelConfig
from .scan import DIRECTIONS, SelectiveScan, cross_scan, cross_unscan


class MultiScaleEncoder(nn.Module):
    """X (B, 1, T) -> [X_1..X_4], each ReLU(conv) of shape (B, N_s, T_s)."""

    def __init__(self, channels: int, kernels: Sequence[int]):
        super().__init__()
        self.kernels = tuple(kernels)
        self.stride = self.kernels[0] // 2
        self.convs = nn.ModuleList(
            nn.Conv1d(1, channels, k, stride=self.stride, bias=False) for k in self.kernels
        )

    def pads(self):
        # extra samples L_i - L_1, split evenly with the odd one on the right
        out = []
        for k in self.kernels:
            extra = k - self.kernels[0]
            out.append((extra // 2, extra - extra // 2))
        return out

    def forward(self, x) -> List[torch.Tensor]:
        if x.shape[-1] < self.kernels[-1]:
            raise ValueError(f"input of {x.shape[-1]} samples is shorter than the longest kernel "
                             f"({self.kernels[-1]})")
        return [F.relu(conv(F.pad(x, pad))) for conv, pad in zip(self.convs, self.pads())]


def _channel_standardize(x, eps=1e-5):
    # Parameter-free layer norm over the channel axis of a (B, C, T) map.
    mean = x.mean(1, keepdim=True)
    var = x.var(1, unbiased=False, keepdim=True)
    return (x - mean) / torch.sqrt(var + eps)


class VSSSBlock(nn.Module):
    """Single-direction selective-scan block over a (C x T) map with a pre-norm residual."""

    def __init__(self, direction: str, expand: int = 2, state_dim: int = 16, chunk: int = 64):
        super().__init__()
        if direction not in DIRECTIONS:
            raise ValueError(f"unknown scan direction {direction!r}")
        self.direction = direction
        self.in_proj = nn.Linear(1, 2 * expand)
        self.conv = nn.Linear(expand, expand)  # pointwise mixing ahead of the scan
        self.scan = SelectiveScan(expand, state_dim, chunk)
        self.out_proj = nn.Linear(expand, 1)

    def forward(self, x, naive_scan: bool = False):
        squeeze = x.dim() == 4
        if squeeze:
            x = x.squeeze(-1)
        c, t = x.shape[-2:]
        seq = cross_scan(_channel_standardize(x), self.direction).unsqueeze(-1)
        u, z = self.in_proj(seq).chunk(2, dim=-1)
        u = F.silu(self.conv(u))
        y = self.scan(u, naive=naive_scan) * F.silu(z)
        y = cross_unscan(self.out_proj(y).squeeze(-1), self.direction, (c, t))
        out = x + y
        return out.unsqueeze(-1) if squeeze else out


class CAM(nn.Module):
    """Channel affinity modulation: X_c * sigmoid(W2 relu(W1 pool(X_hat)))."""

    def __init__(self, channels: int, reduction: int = 4):
        super().__init__()
        hidden = max(1, channels // reduction)
        self.fc1 = nn.Linear(channels, hidden)
        self.fc2 = nn.Linear(hidden, channels)

    def gate(self, x_hat):
        desc = x_hat.mean(dim=(2, 3))
        return torch.sigmoid(self.fc2(F.relu(self.fc1(desc))))

    def forward(self, x_c, x_hat):
        if x_c.shape != x_hat.shape:
            raise ValueError("CAM inputs must share a shape")
        return x_c * self.gate(x_hat)[:, :, None, None]


class GMBlock(nn.Module):
    def __init__(self, channels: int, expand: int = 2, state_dim: int = 16, chunk: int = 64,
                 reduction: int = 4, ff_expand: int = 2):
        super().__init__()
        self.vsss = nn.ModuleList(VSSSBlock(d, expand, state_dim, chunk) for d in DIRECTIONS)
        self.cam = CAM(channels, reduction)
        self.norm = nn.LayerNorm(channels)
        self.ff = nn.Sequential(
            nn.Linear(channels, ff_expand * channels),
            nn.GELU(),
            nn.Linear(ff_expand * channels, channels),
        )

    def forward(self, x_hat, naive_scan: bool = False):
        if x_hat.shape[-1] != len(self.vsss):
            raise ValueError(f"expected {len(self.vsss)} scale slices, got {x_hat.shape[-1]}")
        x_c = torch.stack(
            [blk(x_hat[..., i], naive_scan) for i, blk in enumerate(self.vsss)], -1
        )
        x = self.cam(x_c, x_hat)
        # (B, C, T, S) -> channel-last for the norm and feedforward
        x = self.ff(self.norm(x.permute(0, 2, 3, 1))).permute(0, 3, 1, 2)
        return x_hat + x


class SpeechEncoder(nn.Module):
    """Mixture (B, 1, T) -> (X_tilde (B, N_s, T_s, 4), [X_1..X_4])."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        c = config.speech_channels
        self.multi_scale = MultiScaleEncoder(c, config.kernels)
        self.gm = nn.ModuleList(
            GMBlock(c, config.scan_expand, config.state_dim, config.scan_chunk,
                    config.cam_reduction, config.ff_expand)
            for _ in range(config.gm_layers)
        )

    def forward(self, x, naive_scan: bool = False):
        scales = self.multi_scale(x)
        x_hat = torch.stack(scales, -1)
        out = x_hat
        for blk in self.gm:
            out = blk(out, naive_scan)
        return out, scales


class MaskEncoder(nn.Module):
    """Concatenate the four scale features on channels and map 4*N_s -> N_s with a 1x1 conv."""

    def __init__(self, channels: int):
        super().__init__()
        self.conv = nn.Conv1d(4 * channels, channels, 1)

    def forward(self, scales):
        shapes = {tuple(s.shape) for s in scales}
        if len(scales) != 4 or len(shapes) != 1:
            raise ValueError(f"need four equal-shaped scale features, got {sorted(shapes)}")
        return self.conv(torch.cat(list(scales), 1))
