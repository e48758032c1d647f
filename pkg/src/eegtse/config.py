"""Model hyperparameters and the named presets used across the package."""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass
from typing import Optional

EEG_RATE_HZ = 128


def ms_to_even_samples(ms: float, rate_hz: int) -> int:
    """Convert a filter length in milliseconds to the nearest even sample count (ties round up)."""
    half = ms * rate_hz / 1000.0 / 2.0
    return max(2, 2 * int(math.floor(half + 0.5)))


@dataclass
class ModelConfig:
    sample_rate: int = 14700
    eeg_rate: int = EEG_RATE_HZ
    segment_seconds: float = 2.0
    n_electrodes: int = 128

    speech_channels: int = 128  # N_s
    eeg_channels: int = 64  # N_e
    kernel_ms: tuple = (2.5, 5.0, 10.0, 20.0)
    kernel_lengths: Optional[tuple] = None  # explicit override of kernel_ms

    gm_layers: int = 2
    scale_fusion: str = "learned"  # "learned" or "sum" (the w/o-GM ablation)
    state_dim: int = 16
    scan_expand: int = 2
    scan_chunk: int = 64
    cam_reduction: int = 4
    ff_expand: int = 2

    cheb_order: int = 3
    graph_mode: str = "distance"
    res_kernel: int = 3

    cmca_layers: int = 3
    attn_heads: int = 4
    norm_groups: int = 8

    chunk_size: int = 250
    dprnn_layers: int = 4

    tau: float = 0.1

    def __post_init__(self):
        self.kernel_ms = tuple(self.kernel_ms)
        if self.kernel_lengths is not None:
            self.kernel_lengths = tuple(int(k) for k in self.kernel_lengths)
        ks = self.kernels
        if len(ks) != 4 or any(a >= b for a, b in zip(ks, ks[1:])):
            raise ValueError(f"kernel lengths must be 4 strictly increasing values, got {ks}")
        if ks[0] % 2:
            raise ValueError(f"first kernel length must be even, got {ks[0]}")
        if self.chunk_size % 2:
            raise ValueError("DPRNN chunk size must be even")
        if self.eeg_channels % self.attn_heads:
            raise ValueError("eeg_channels must be divisible by attn_heads")
        if self.eeg_channels % self.norm_groups:
            raise ValueError("eeg_channels must be divisible by norm_groups")
        if not 0 <= self.gm_layers <= 5:
            raise ValueError("gm_layers must be in 0..5")
        if self.scale_fusion not in ("learned", "sum"):
            raise ValueError(f"unknown scale_fusion {self.scale_fusion!r}")

    @property
    def kernels(self) -> tuple:
        if self.kernel_lengths is not None:
            return self.kernel_lengths
        return tuple(ms_to_even_samples(ms, self.sample_rate) for ms in self.kernel_ms)

    @property
    def stride(self) -> int:
        return self.kernels[0] // 2

    @property
    def segment_samples(self) -> int:
        return int(round(self.segment_seconds * self.sample_rate))

    @property
    def eeg_samples(self) -> int:
        return int(round(self.segment_seconds * self.eeg_rate))

    def speech_frames(self, n_samples: Optional[int] = None) -> int:
        t = self.segment_samples if n_samples is None else n_samples
        return (t - self.kernels[0]) // self.stride + 1

    def replace(self, **changes) -> "ModelConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["kernel_ms"] = list(self.kernel_ms)
        if self.kernel_lengths is not None:
            d["kernel_lengths"] = list(self.kernel_lengths)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown ModelConfig keys: {sorted(unknown)}")
        return cls(**d)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def full_config(**overrides) -> ModelConfig:
    """Full-size configuration: N_s=128, N_e=64, 128 electrodes, 2 s at 14.7 kHz."""
    return ModelConfig(**overrides)


def desk_config(**overrides) -> ModelConfig:
    """CPU-friendly default: same time axis as the full model, narrow channels."""
    kw = dict(
        speech_channels=32,
        eeg_channels=16,
        n_electrodes=16,
        state_dim=4,
    )
    kw.update(overrides)
    return ModelConfig(**kw)


def mini_config(**overrides) -> ModelConfig:
    """Miniature model used by gradient checks and overfit runs (T=400 samples, L1=8)."""
    kw = dict(
        sample_rate=1600,
        segment_seconds=0.25,
        n_electrodes=4,
        speech_channels=8,
        eeg_channels=4,
        kernel_lengths=(8, 16, 32, 64),
        state_dim=2,
        scan_chunk=16,
        attn_heads=2,
        norm_groups=2,
        chunk_size=20,
        cmca_layers=3,
        dprnn_layers=4,
    )
    kw.update(overrides)
    return ModelConfig(**kw)


def lab_config(**overrides) -> ModelConfig:
    """Small low-rate model for multi-seed experiments on one CPU (1 s at 1 kHz)."""
    kw = dict(
        sample_rate=1000,
        segment_seconds=1.0,
        n_electrodes=8,
        speech_channels=16,
        eeg_channels=8,
        kernel_lengths=(8, 16, 32, 64),
        state_dim=4,
        scan_chunk=32,
        attn_heads=2,
        norm_groups=2,
        chunk_size=40,
    )
    kw.update(overrides)
    return ModelConfig(**kw)


PRESETS = {"full": full_config, "desk": desk_config, "lab": lab_config, "mini": mini_config}


def preset(name: str, **overrides) -> ModelConfig:
    try:
        return PRESETS[name](**overrides)
    except KeyError:
        raise ValueError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None

