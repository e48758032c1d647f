"""Speaker extractor: cross-attention fusion, dual-path recurrent mask, masking and decoding.

Also holds the end-to-end model that wires both encoders, the alignment projection and
the extractor together.
"""

from __future__ import annotations

import math
from typing import Dict, Optional

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .alignment import AlignedPairBatch, AlignProject
from .config import ModelConfig
from .datasets import electrode_positions
from .eeg_encoder import EEGEncoder, ElectrodeGraph, build_graph
from .speech_encoder import MaskEncoder, SpeechEncoder


class ConvCrossAttention(nn.Module):
    """Multi-head attention over time with 1x1-convolution projections; (B, C, T) streams."""

    def __init__(self, channels: int, heads: int = 4):
        super().__init__()
        if channels % heads:
            raise ValueError("channels must be divisible by heads")
        self.heads = heads
        self.q = nn.Conv1d(channels, channels, 1)
        self.k = nn.Conv1d(channels, channels, 1)
        self.v = nn.Conv1d(channels, channels, 1)
        self.out = nn.Conv1d(channels, channels, 1)

    def _split(self, x):
        b, c, t = x.shape
        return x.view(b, self.heads, c // self.heads, t).transpose(-1, -2)

    def forward(self, query, context):
        b, c, t = query.shape
        q, k, v = self._split(self.q(query)), self._split(self.k(context)), self._split(self.v(context))
        scores = q @ k.transpose(-1, -2) / math.sqrt(c // self.heads)
        att = torch.softmax(scores, dim=-1) @ v
        return self.out(att.transpose(-1, -2).reshape(b, c, t))


class CMCALayer(nn.Module):
    def __init__(self, channels: int, heads: int = 4, groups: int = 8):
        super().__init__()
        self.eeg_attn = ConvCrossAttention(channels, heads)
        self.speech_attn = ConvCrossAttention(channels, heads)
        self.eeg_norm = nn.GroupNorm(groups, channels)
        self.speech_norm = nn.GroupNorm(groups, channels)

    def forward(self, e, s):
        e_new = self.eeg_norm(e + self.eeg_attn(e, s))
        s_new = self.speech_norm(s + self.speech_attn(s, e))
        return e_new, s_new


class CMCA(nn.Module):
    """Three bidirectional cross-attention layers; the last layer's streams are concatenated
    with the first layer's inputs and fused back to N_e channels by a 1x1 convolution."""

    def __init__(self, channels: int, layers: int = 3, heads: int = 4, groups: int = 8):
        super().__init__()
        self.layers = nn.ModuleList(CMCALayer(channels, heads, groups) for _ in range(layers))
        self.fuse = nn.Conv1d(4 * channels, channels, 1)

    def forward(self, e_feat, s_feat):
        if e_feat.shape != s_feat.shape:
            raise ValueError(f"CMCA streams differ: {tuple(e_feat.shape)} vs {tuple(s_feat.shape)}")
        e, s = e_feat, s_feat
        for layer in self.layers:
            e, s = layer(e, s)
        return self.fuse(torch.cat([e, s, e_feat, s_feat], 1))


def chunk_count(length: int, chunk: int) -> tuple:
    """(number of 50%-overlapped chunks, padded length) for a sequence of ``length``."""
    hop = chunk // 2
    if length <= chunk:
        return 1, chunk
    k = -(-(length - chunk) // hop) + 1
    return k, (k - 1) * hop + chunk


def segment(x: torch.Tensor, chunk: int) -> torch.Tensor:
    """(B, C, T) -> (B, C, chunk, K): right-padded, hop chunk/2."""
    if chunk % 2:
        raise ValueError("chunk length must be even")
    _, padded = chunk_count(x.shape[-1], chunk)
    x = F.pad(x, (0, padded - x.shape[-1]))
    return x.unfold(-1, chunk, chunk // 2).transpose(-1, -2)


def overlap_add(frames: torch.Tensor, length: int) -> torch.Tensor:
    """Inverse of :func:`segment`: sum overlapping chunks, divide by coverage, trim to ``length``."""
    b, c, chunk, k = frames.shape
    hop = chunk // 2
    padded = (k - 1) * hop + chunk
    cols = frames.reshape(b, c * chunk, k)
    total = F.fold(cols, (1, padded), (1, chunk), stride=(1, hop)).view(b, c, padded)
    ones = torch.ones(1, chunk, k, dtype=frames.dtype, device=frames.device)
    count = F.fold(ones, (1, padded), (1, chunk), stride=(1, hop)).view(1, 1, padded)
    return (total / count)[..., :length]


class DualPathBlock(nn.Module):
    """Intra-chunk then inter-chunk BiLSTM, each with linear + layer norm + residual."""

    def __init__(self, channels: int, hidden: int):
        super().__init__()
        self.intra_rnn = nn.LSTM(channels, hidden, batch_first=True, bidirectional=True)
        self.intra_fc = nn.Linear(2 * hidden, channels)
        self.intra_norm = nn.LayerNorm(channels)
        self.inter_rnn = nn.LSTM(channels, hidden, batch_first=True, bidirectional=True)
        self.inter_fc = nn.Linear(2 * hidden, channels)
        self.inter_norm = nn.LayerNorm(channels)

    def forward(self, x):
        b, c, length, k = x.shape
        h = x.permute(0, 3, 2, 1).reshape(b * k, length, c)
        h = self.intra_norm(self.intra_fc(self.intra_rnn(h)[0]))
        x = x + h.view(b, k, length, c).permute(0, 3, 2, 1)
        h = x.permute(0, 2, 3, 1).reshape(b * length, k, c)
        h = self.inter_norm(self.inter_fc(self.inter_rnn(h)[0]))
        return x + h.view(b, length, k, c).permute(0, 3, 1, 2)


class DPRNNMask(nn.Module):
    """Fused feature Y (B, N_e, T_s) -> mask M (B, N_s, T_s) in [0, 1]."""

    def __init__(self, in_channels: int, out_channels: int, chunk: int = 250, layers: int = 4,
                 hidden: Optional[int] = None):
        super().__init__()
        self.chunk = chunk
        self.blocks = nn.ModuleList(
            DualPathBlock(in_channels, hidden or in_channels) for _ in range(layers)
        )
        self.act = nn.PReLU()
        self.head = nn.Conv1d(in_channels, out_channels, 1)

    def body(self, y):
        frames = segment(y, self.chunk)
        for blk in self.blocks:
            frames = blk(frames)
        return overlap_add(frames, y.shape[-1])

    def forward(self, y):
        return torch.sigmoid(self.head(self.act(self.body(y))))


def apply_mask(x_en: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    if x_en.shape != mask.shape:
        raise ValueError(f"mask {tuple(mask.shape)} does not match encoding {tuple(x_en.shape)}")
    return x_en * mask


class Decoder(nn.Module):
    """Transposed convolution N_s -> 1 with kernel L_1 and stride L_1/2, fitted to length T."""

    def __init__(self, channels: int, kernel: int):
        super().__init__()
        self.deconv = nn.ConvTranspose1d(channels, 1, kernel, stride=kernel // 2)

    def forward(self, s_hat, length: int):
        out = self.deconv(s_hat)
        if out.shape[-1] >= length:
            return out[..., :length]
        return F.pad(out, (0, length - out.shape[-1]))


def default_graph(config: ModelConfig) -> ElectrodeGraph:
    n = config.n_electrodes
    if config.graph_mode == "distance":
        return build_graph(n, "distance", electrode_positions(n))
    return build_graph(n, config.graph_mode)


class TargetSpeakerExtractor(nn.Module):
    """End-to-end EEG-conditioned extractor.

    ``forward(mixture (B, 1, T), eeg (B, N, T_eeg))`` returns the estimate (B, 1, T) and
    the aligned EEG/speech pair batch for the contrastive loss.
    """

    def __init__(self, config: ModelConfig, graph: Optional[ElectrodeGraph] = None):
        super().__init__()
        self.config = config
        c_s, c_e = config.speech_channels, config.eeg_channels
        self.speech_encoder = SpeechEncoder(config)
        self.eeg_encoder = EEGEncoder(config, graph or default_graph(config))
        self.align = AlignProject(c_s, c_e, config.scale_fusion)
        self.cmca = CMCA(c_e, config.cmca_layers, config.attn_heads, config.norm_groups)
        self.masker = DPRNNMask(c_e, c_s, config.chunk_size, config.dprnn_layers)
        self.mask_encoder = MaskEncoder(c_s)
        self.decoder = Decoder(c_s, config.kernels[0])

    def forward(self, mixture, eeg, return_intermediates: bool = False):
        if mixture.dim() == 2:
            mixture = mixture.unsqueeze(1)
        t = mixture.shape[-1]
        x_tilde, scales = self.speech_encoder(mixture)
        e_prime = self.eeg_encoder(eeg)
        s_feat, e_tilde, pairs = self.align(x_tilde, e_prime)
        y = self.cmca(e_tilde, s_feat)
        mask = self.masker(y)
        x_en = self.mask_encoder(scales)
        s_masked = apply_mask(x_en, mask)
        estimate = self.decoder(s_masked, t)
        if not return_intermediates:
            return estimate, pairs
        inter: Dict[str, torch.Tensor] = {
            **{f"X_{i + 1}": s for i, s in enumerate(scales)},
            "X_hat": torch.stack(scales, -1),
            "X_tilde": x_tilde,
            "E_prime": e_prime,
            "E_tilde": e_tilde,
            "S_feat": s_feat,
            "Y": y,
            "M": mask,
            "X_en": x_en,
            "S_hat": s_masked,
            "s_hat": estimate,
        }
        return estimate, pairs, inter


@torch.no_grad()
def extract_long(model: TargetSpeakerExtractor, mixture: np.ndarray, eeg: np.ndarray) -> np.ndarray:
    """Run the model over a recording longer than its training segment.

    The input is cut into consecutive model-length windows (the last one zero-padded);
    the window estimates are concatenated and trimmed to the input length.
    """
    cfg = model.config
    win_a, win_e = cfg.segment_samples, cfg.eeg_samples
    mixture = np.asarray(mixture, dtype=np.float64)
    eeg = np.asarray(eeg, dtype=np.float64)
    n_win = max(1, -(-mixture.shape[-1] // win_a))
    mix = np.zeros(n_win * win_a)
    mix[: mixture.shape[-1]] = mixture
    e = np.zeros((eeg.shape[0], n_win * win_e))
    n_e = min(eeg.shape[-1], n_win * win_e)
    e[:, :n_e] = eeg[:, :n_e]
    dtype = next(model.parameters()).dtype
    mix_t = torch.as_tensor(mix.reshape(n_win, 1, win_a), dtype=dtype)
    eeg_t = torch.as_tensor(e.reshape(e.shape[0], n_win, win_e).transpose(1, 0, 2).copy(), dtype=dtype)
    est, _ = model(mix_t, eeg_t)
    return est.reshape(-1).double().numpy()[: mixture.shape[-1]]
