"""Common EEG/speech embedding space and the batch-contrastive InfoNCE objective."""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F


@dataclass
class AlignedPairBatch:
    queries: torch.Tensor  # (B, D) EEG side
    keys: torch.Tensor  # (B, D) speech side

    def __post_init__(self):
        if self.queries.shape != self.keys.shape or self.queries.dim() != 2:
            raise ValueError(
                f"queries {tuple(self.queries.shape)} and keys {tuple(self.keys.shape)} must be equal (B, D)"
            )


def expand_time(e: torch.Tensor, length: int) -> torch.Tensor:
    """Linearly interpolate (B, C, T_e) to (B, C, length) with endpoints pinned."""
    if e.shape[-1] == length:
        return e
    if e.shape[-1] > length:
        raise ValueError(f"cannot expand {e.shape[-1]} EEG frames down to {length}")
    return F.interpolate(e, size=length, mode="linear", align_corners=True)


class AlignProject(nn.Module):
    """Map X_tilde (B, N_s, T_s, 4) and E' (B, N_e, T_e) to a shared (B, N_e, T_s) layout.

    The speech branch collapses the scale axis (a learned 4 -> 1 map, or a plain sum
    for the no-GM ablation) and then projects N_s -> N_e channels.
    """

    def __init__(self, speech_channels: int, eeg_channels: int, scale_fusion: str = "learned"):
        super().__init__()
        self.scale_fusion = scale_fusion
        if scale_fusion == "learned":
            self.collapse = nn.Linear(4, 1)
            with torch.no_grad():
                self.collapse.weight.fill_(0.25)
                self.collapse.bias.zero_()
        self.proj = nn.Conv1d(speech_channels, eeg_channels, 1)

    def speech(self, x_tilde):
        if self.scale_fusion == "learned":
            s = self.collapse(x_tilde).squeeze(-1)
        else:
            s = x_tilde.sum(-1)
        return self.proj(s)

    def forward(self, x_tilde, e_prime):
        if x_tilde.shape[0] != e_prime.shape[0]:
            raise ValueError("speech and EEG batch sizes differ")
        s_feat = self.speech(x_tilde)
        e_feat = expand_time(e_prime, s_feat.shape[-1])
        pairs = AlignedPairBatch(e_feat.flatten(1), s_feat.flatten(1))
        return s_feat, e_feat, pairs


def cosine_matrix(q, x, eps: float = 1e-8):
    qn = q / q.norm(dim=1, keepdim=True).clamp_min(eps)
    xn = x / x.norm(dim=1, keepdim=True).clamp_min(eps)
    return qn @ xn.t()


def infonce_loss(batch: AlignedPairBatch, tau: float = 0.1, eps: float = 1e-8) -> torch.Tensor:
    """Mean over queries of -log softmax_k(cos(q_i, x_k) / tau)[i]."""
    b = batch.queries.shape[0]
    if b < 2:
        raise ValueError("InfoNCE needs at least two pairs for in-batch negatives")
    if tau <= 0:
        raise ValueError("temperature must be positive")
    logits = cosine_matrix(batch.queries, batch.keys, eps) / tau
    target = torch.arange(b, device=logits.device)
    return F.cross_entropy(logits, target)
