"""Training objective and objective speech metrics (SI-SDR, SDR, STOI, ESTOI)."""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Optional, Sequence

import numpy as np
import torch
from scipy import signal

from .alignment import AlignedPairBatch, infonce_loss

EPS = 1e-8


class SilentReferenceError(ValueError):
    pass


# ---------------------------------------------------------------- differentiable objective


def si_sdr_torch(s: torch.Tensor, s_hat: torch.Tensor, eps: float = EPS,
                 ids: Optional[Sequence[str]] = None) -> torch.Tensor:
    """Per-item SI-SDR in dB along the last axis."""
    if s.shape != s_hat.shape:
        raise ValueError(f"length mismatch: {tuple(s.shape)} vs {tuple(s_hat.shape)}")
    energy = (s * s).sum(-1)
    silent = (energy <= 0).reshape(-1)
    if bool(silent.any()):
        idx = int(torch.nonzero(silent)[0])
        name = ids[idx] if ids is not None else idx
        raise SilentReferenceError(f"reference of segment {name} is silent")
    alpha = (s_hat * s).sum(-1, keepdim=True) / energy.unsqueeze(-1)
    proj = alpha * s
    num = (proj * proj).sum(-1)
    den = ((s_hat - proj) ** 2).sum(-1)
    return 10 * torch.log10(num / (den + eps) + eps)


def si_sdr_loss(s, s_hat, eps: float = EPS, ids=None) -> torch.Tensor:
    """Negative SI-SDR averaged over the batch."""
    return -si_sdr_torch(s, s_hat, eps, ids).mean()


@dataclass
class LossReport:
    total: torch.Tensor
    si_sdr_term: torch.Tensor
    infonce_term: torch.Tensor
    lam: float

    def as_floats(self) -> dict:
        return {"total": self.total.item(), "si_sdr_term": self.si_sdr_term.item(),
                "infonce_term": self.infonce_term.item(), "lambda": self.lam}


def combine(si_sdr_term, infonce_term, lam: float) -> LossReport:
    return LossReport(si_sdr_term + lam * infonce_term, si_sdr_term, infonce_term, lam)


def total_loss(s, s_hat, pairs: AlignedPairBatch, lam: float = 3.0, tau: float = 0.1,
               ids=None) -> LossReport:
    """SI-SDR loss plus lam times the InfoNCE alignment loss."""
    return combine(si_sdr_loss(s, s_hat, ids=ids), infonce_loss(pairs, tau), lam)


# ---------------------------------------------------------------- evaluation metrics (numpy)


def si_sdr(s, s_hat, eps: float = EPS) -> float:
    s = np.asarray(s, dtype=np.float64)
    s_hat = np.asarray(s_hat, dtype=np.float64)
    if s.shape != s_hat.shape:
        raise ValueError("reference and estimate lengths differ")
    energy = np.dot(s, s)
    if energy <= 0:
        raise SilentReferenceError("reference is silent")
    proj = np.dot(s_hat, s) / energy * s
    num = np.dot(proj, proj)
    res = s_hat - proj
    return float(10 * np.log10(num / (np.dot(res, res) + eps) + eps))


def sdr(s, s_hat, eps: float = EPS) -> float:
    """Plain signal-to-distortion energy ratio; capped at 10*log10(|s|^2/eps) when s_hat == s."""
    s = np.asarray(s, dtype=np.float64)
    s_hat = np.asarray(s_hat, dtype=np.float64)
    if s.shape != s_hat.shape:
        raise ValueError("reference and estimate lengths differ")
    err = s - s_hat
    return float(10 * np.log10(np.dot(s, s) / (np.dot(err, err) + eps)))


# STOI constants (10 kHz analysis, 256-sample frames, 15 third-octave bands from 150 Hz)
STOI_FS = 10000
N_FRAME = 256
NFFT = 512
NUM_BANDS = 15
MIN_FREQ = 150
SEG_FRAMES = 30
BETA = -15.0
DYN_RANGE = 40.0
_TINY = np.finfo(np.float64).eps


def third_octave_bands(fs=STOI_FS, nfft=NFFT, num_bands=NUM_BANDS, min_freq=MIN_FREQ):
    """Binary (bands x bins) matrix grouping rfft bins into one-third-octave bands."""
    f = np.linspace(0, fs, nfft + 1)[: nfft // 2 + 1]
    k = np.arange(num_bands, dtype=np.float64)
    lo = min_freq * 2.0 ** ((2 * k - 1) / 6)
    hi = min_freq * 2.0 ** ((2 * k + 1) / 6)
    obm = np.zeros((num_bands, f.size))
    for i in range(num_bands):
        a = int(np.argmin((f - lo[i]) ** 2))
        b = int(np.argmin((f - hi[i]) ** 2))
        obm[i, a:b] = 1.0
    return obm


def _matlab_resample_filter(up: int, down: int) -> np.ndarray:
    # Kaiser-windowed sinc as designed by MATLAB/Octave resample(): 60 dB rejection,
    # cutoff 1/(2 max(up, down)), transition width a tenth of the cutoff.
    rejection_db = 60.0
    cutoff = 1.0 / (2 * max(up, down))
    width = cutoff / 10
    half = int(np.ceil((rejection_db - 8) / (28.714 * width)))
    t = np.arange(-half, half + 1)
    ideal = 2 * up * cutoff * np.sinc(2 * cutoff * t)
    beta = 0.1102 * (rejection_db - 8.7)
    h = np.kaiser(2 * half + 1, beta) * ideal
    return h / h.sum()


def resample_for_stoi(x: np.ndarray, fs: int) -> np.ndarray:
    ratio = Fraction(STOI_FS, int(fs))
    h = _matlab_resample_filter(ratio.numerator, ratio.denominator)
    return signal.resample_poly(x, ratio.numerator, ratio.denominator, window=h)


def _window():
    return np.hanning(N_FRAME + 2)[1:-1]


def _frames(x, hop):
    idx = np.arange(0, x.size - N_FRAME, hop)
    return np.stack([x[i:i + N_FRAME] for i in idx]) if idx.size else np.zeros((0, N_FRAME))


def remove_silent_frames(x, y, dyn_range=DYN_RANGE, hop=N_FRAME // 2):
    """Drop frames of both signals where x is more than ``dyn_range`` dB below its loudest frame."""
    w = _window()
    xf = _frames(x, hop) * w
    yf = _frames(y, hop) * w
    energy = 20 * np.log10(np.linalg.norm(xf, axis=1) + _TINY)
    keep = energy > energy.max() - dyn_range
    xf, yf = xf[keep], yf[keep]
    n = xf.shape[0]
    length = (n - 1) * hop + N_FRAME if n else 0
    xs, ys = np.zeros(length), np.zeros(length)
    for i in range(n):
        xs[i * hop:i * hop + N_FRAME] += xf[i]
        ys[i * hop:i * hop + N_FRAME] += yf[i]
    return xs, ys


def _band_envelopes(x, obm):
    w = _window()
    hop = N_FRAME // 2
    starts = range(0, x.size - N_FRAME, hop)
    spec = np.stack([np.fft.rfft(w * x[i:i + N_FRAME], n=NFFT) for i in starts], 1)
    return np.sqrt(obm @ np.abs(spec) ** 2)


def _unit(v, axis):
    v = v - v.mean(axis=axis, keepdims=True)
    return v / (np.linalg.norm(v, axis=axis, keepdims=True) + _TINY)


def stoi(s, s_hat, fs: int, extended: bool = False) -> float:
    """Short-time objective intelligibility (``extended=True`` gives ESTOI)."""
    s = np.asarray(s, dtype=np.float64)
    s_hat = np.asarray(s_hat, dtype=np.float64)
    if s.shape != s_hat.shape:
        raise ValueError("reference and estimate lengths differ")
    if fs != STOI_FS:
        s = resample_for_stoi(s, fs)
        s_hat = resample_for_stoi(s_hat, fs)
    if not np.any(s):
        raise SilentReferenceError("reference is silent")
    s, s_hat = remove_silent_frames(s, s_hat)
    obm = third_octave_bands()
    x_env = _band_envelopes(s, obm) if s.size > N_FRAME else np.zeros((NUM_BANDS, 0))
    y_env = _band_envelopes(s_hat, obm) if s_hat.size > N_FRAME else np.zeros((NUM_BANDS, 0))
    if x_env.shape[1] < SEG_FRAMES:
        raise ValueError(
            f"only {x_env.shape[1]} active frames; STOI needs at least {SEG_FRAMES} (~384 ms)"
        )
    # (segments, bands, frames)
    xs = np.stack([x_env[:, m - SEG_FRAMES:m] for m in range(SEG_FRAMES, x_env.shape[1] + 1)])
    ys = np.stack([y_env[:, m - SEG_FRAMES:m] for m in range(SEG_FRAMES, y_env.shape[1] + 1)])
    if extended:
        xn = _unit(_unit(xs, 2), 1)
        yn = _unit(_unit(ys, 2), 1)
        return float(np.sum(xn * yn) / (SEG_FRAMES * xn.shape[0]))
    scale = np.linalg.norm(xs, axis=2, keepdims=True) / (
        np.linalg.norm(ys, axis=2, keepdims=True) + _TINY)
    y_prime = np.minimum(ys * scale, xs * (1 + 10 ** (-BETA / 20)))
    corr = _unit(y_prime, 2) * _unit(xs, 2)
    return float(np.sum(corr) / (xs.shape[0] * xs.shape[1]))


def estoi(s, s_hat, fs: int) -> float:
    return stoi(s, s_hat, fs, extended=True)


METRICS = ("si_sdr", "sdr", "stoi", "estoi")


def segment_metrics(s, s_hat, fs: int) -> dict:
    return {
        "si_sdr": si_sdr(s, s_hat),
        "sdr": sdr(s, s_hat),
        "stoi": stoi(s, s_hat, fs),
        "estoi": estoi(s, s_hat, fs),
    }
