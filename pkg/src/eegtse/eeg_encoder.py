"""EEG encoder: Chebyshev graph convolutions over electrodes, then a pooled ResBlock stack."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .config import ModelConfig


@dataclass
class ElectrodeGraph:
    adjacency: np.ndarray
    scaled_laplacian: np.ndarray
    lambda_max: float


def _lambda_max(lap: np.ndarray) -> float:
    # electrode graphs are small, so an exact symmetric eigensolve is cheap
    return float(np.linalg.eigvalsh(lap)[-1])


def normalized_laplacian(adjacency: np.ndarray) -> np.ndarray:
    """Symmetric-normalized Laplacian I - D^-1/2 A D^-1/2 (isolated nodes keep a unit diagonal)."""
    deg = adjacency.sum(1)
    inv_sqrt = np.zeros_like(deg)
    nz = deg > 0
    inv_sqrt[nz] = 1.0 / np.sqrt(deg[nz])
    return np.eye(adjacency.shape[0]) - inv_sqrt[:, None] * adjacency * inv_sqrt[None, :]


def graph_from_adjacency(adjacency: np.ndarray) -> ElectrodeGraph:
    a = np.asarray(adjacency, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"adjacency must be square, got {a.shape}")
    if a.shape[0] < 2:
        raise ValueError("graph needs at least 2 nodes")
    if not np.allclose(a, a.T) or np.any(a < 0):
        raise ValueError("adjacency must be symmetric and nonnegative")
    a = 0.5 * (a + a.T)
    np.fill_diagonal(a, 0.0)
    lap = normalized_laplacian(a)
    lam = _lambda_max(lap)
    scaled = 2.0 * lap / lam - np.eye(a.shape[0])
    return ElectrodeGraph(a, scaled, lam)


def build_graph(n_or_record, mode: str = "distance", positions: Optional[np.ndarray] = None):
    """Electrode graph from an EegRecord (or an electrode count plus positions).

    ``distance``: Gaussian kernel of inter-electrode distance, width = median distance.
    ``full``: every pair of electrodes connected with weight 1.
    """
    if isinstance(n_or_record, (int, np.integer)):
        n = int(n_or_record)
    else:
        n = n_or_record.n_channels
        if positions is None:
            positions = n_or_record.positions
    if n < 2:
        raise ValueError(f"graph needs at least 2 electrodes, got {n}")
    if mode == "full":
        a = np.ones((n, n)) - np.eye(n)
    elif mode == "distance":
        if positions is None:
            raise ValueError("distance mode needs electrode positions")
        p = np.asarray(positions, dtype=np.float64)
        d2 = ((p[:, None, :] - p[None, :, :]) ** 2).sum(-1)
        iu = np.triu_indices(n, 1)
        sigma = np.median(np.sqrt(d2[iu]))
        a = np.exp(-d2 / sigma ** 2)
        np.fill_diagonal(a, 0.0)
    else:
        raise ValueError(f"unknown graph mode {mode!r}")
    return graph_from_adjacency(a)


def cheb_graph_conv(x: torch.Tensor, lap: torch.Tensor, weights: torch.Tensor) -> torch.Tensor:
    """sum_k T_k(L) X Theta_k for X (B, N, F), L (N, N), Theta (K, F, F')."""
    if x.dim() != 3 or lap.shape != (x.shape[1], x.shape[1]) or weights.dim() != 3 \
            or weights.shape[1] != x.shape[2]:
        raise ValueError(
            f"shape mismatch: X {tuple(x.shape)}, L {tuple(lap.shape)}, Theta {tuple(weights.shape)}"
        )
    if not torch.isfinite(weights).all():
        raise ValueError("non-finite Chebyshev weights")
    t_prev = x
    out = t_prev @ weights[0]
    if weights.shape[0] > 1:
        t_cur = torch.einsum("nm,bmf->bnf", lap, x)
        out = out + t_cur @ weights[1]
        for k in range(2, weights.shape[0]):
            t_prev, t_cur = t_cur, 2 * torch.einsum("nm,bmf->bnf", lap, t_cur) - t_prev
            out = out + t_cur @ weights[k]
    return out


class ChebConv(nn.Module):
    def __init__(self, in_features: int, out_features: int, order: int = 3):
        super().__init__()
        self.weight = nn.Parameter(torch.randn(order, in_features, out_features)
                                   / np.sqrt(order * in_features))

    def forward(self, x, lap):
        return cheb_graph_conv(x, lap, self.weight)


def channelwise_norm(x, gain, bias, eps: float = 1e-8):
    """Standardize each (batch, channel) row over time, then apply a per-channel affine map."""
    mean = x.mean(-1, keepdim=True)
    var = x.var(-1, unbiased=False, keepdim=True)
    return (x - mean) / torch.sqrt(var + eps) * gain[:, None] + bias[:, None]


class ChannelwiseNorm(nn.Module):
    def __init__(self, channels: int, eps: float = 1e-8):
        super().__init__()
        self.gain = nn.Parameter(torch.ones(channels))
        self.bias = nn.Parameter(torch.zeros(channels))
        self.eps = eps

    def forward(self, x):
        return channelwise_norm(x, self.gain, self.bias, self.eps)


class ResBlock(nn.Module):
    """conv-BN-PReLU, conv-BN, residual add, PReLU, then max-pool by 2."""

    def __init__(self, in_channels: int, out_channels: int, kernel_size: int = 3):
        super().__init__()
        pad = kernel_size // 2
        self.conv1 = nn.Conv1d(in_channels, out_channels, kernel_size, padding=pad, bias=False)
        self.bn1 = nn.BatchNorm1d(out_channels, momentum=0.1)
        self.act1 = nn.PReLU(out_channels, init=0.25)
        self.conv2 = nn.Conv1d(out_channels, out_channels, kernel_size, padding=pad, bias=False)
        self.bn2 = nn.BatchNorm1d(out_channels, momentum=0.1)
        self.act2 = nn.PReLU(out_channels, init=0.25)
        self.proj = (nn.Conv1d(in_channels, out_channels, 1, bias=False)
                     if in_channels != out_channels else nn.Identity())
        self.pool = nn.MaxPool1d(2, 2)

    def forward(self, r):
        if r.shape[-1] % 2:
            r = F.pad(r, (0, 1))
        h = self.act1(self.bn1(self.conv1(r)))
        out = self.act2(self.proj(r) + self.bn2(self.conv2(h)))
        if not torch.isfinite(out).all():
            raise FloatingPointError("non-finite activations in ResBlock")
        return self.pool(out)


class EEGEncoder(nn.Module):
    """(B, N, T_raw) EEG -> (B, N_e, T_raw / 8) embedding E'."""

    def __init__(self, config: ModelConfig, graph: ElectrodeGraph):
        super().__init__()
        n = config.n_electrodes
        if graph.scaled_laplacian.shape != (n, n):
            raise ValueError("graph size does not match n_electrodes")
        t_raw = config.eeg_samples
        self.n_electrodes = n
        self.t_raw = t_raw
        self.register_buffer("laplacian", torch.as_tensor(graph.scaled_laplacian, dtype=torch.float32))
        self.gcn = nn.ModuleList(ChebConv(t_raw, t_raw, config.cheb_order) for _ in range(3))
        self.norm = ChannelwiseNorm(n)
        self.conv_in = nn.Conv1d(n, config.eeg_channels, 1)
        self.blocks = nn.Sequential(*(ResBlock(config.eeg_channels, config.eeg_channels,
                                               config.res_kernel) for _ in range(3)))
        self.conv_out = nn.Conv1d(config.eeg_channels, config.eeg_channels, 1)

    def forward(self, eeg):
        if eeg.shape[1:] != (self.n_electrodes, self.t_raw):
            raise ValueError(
                f"expected EEG of shape (B, {self.n_electrodes}, {self.t_raw}), got {tuple(eeg.shape)}"
            )
        x = eeg
        for i, layer in enumerate(self.gcn):
            x = layer(x, self.laplacian)
            if i < len(self.gcn) - 1:
                x = F.relu(x)
        x = self.norm(x)
        x = self.conv_in(x)
        x = self.blocks(x)
        return self.conv_out(x)
