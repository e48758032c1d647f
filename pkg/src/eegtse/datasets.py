"""Synthetic cocktail-party trials with latency-bearing pseudo-EEG, segmentation and manifests.

Sources are band-limited noise carriers under slow (2-8 Hz) amplitude envelopes. The
pseudo-EEG is the attended source's low-passed amplitude envelope, projected onto the
electrodes by a random spatial pattern, delayed by a configurable neural latency and
buried in sensor noise.
"""

from __future__ import annotations

import json
import math
import os
import warnings
import wave
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np
from scipy import signal

from .config import EEG_RATE_HZ

MANIFEST_VERSION = 1


@dataclass
class AudioWave:
    samples: np.ndarray
    sample_rate_hz: int

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1 or self.samples.size == 0:
            raise ValueError("AudioWave needs a nonempty 1-D array")
        if int(self.sample_rate_hz) <= 0:
            raise ValueError(f"sample rate must be positive, got {self.sample_rate_hz}")
        self.sample_rate_hz = int(self.sample_rate_hz)
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("AudioWave contains non-finite samples")

    def __len__(self):
        return self.samples.size

    @property
    def duration(self) -> float:
        return self.samples.size / self.sample_rate_hz


@dataclass
class EegRecord:
    data: np.ndarray  # (N electrodes, T samples), stored as float32
    sample_rate_hz: int
    electrode_ids: List[str]
    positions: Optional[np.ndarray] = None  # (N, 3)

    def __post_init__(self):
        self.data = np.ascontiguousarray(self.data, dtype=np.float32)
        if self.data.ndim != 2 or self.data.shape[0] < 2:
            raise ValueError(f"EEG data must be (N>=2, T), got shape {self.data.shape}")
        if not np.all(np.isfinite(self.data)):
            raise ValueError("EEG data contains non-finite values")
        self.electrode_ids = [str(e) for e in self.electrode_ids]
        if len(self.electrode_ids) != self.data.shape[0]:
            raise ValueError("electrode_ids length does not match the channel count")
        if int(self.sample_rate_hz) <= 0:
            raise ValueError("EEG sample rate must be positive")
        self.sample_rate_hz = int(self.sample_rate_hz)
        if self.positions is not None:
            self.positions = np.asarray(self.positions, dtype=np.float64)
            if self.positions.shape != (self.data.shape[0], 3):
                raise ValueError(f"positions must be (N, 3), got {self.positions.shape}")

    @property
    def n_channels(self) -> int:
        return self.data.shape[0]

    @property
    def n_samples(self) -> int:
        return self.data.shape[1]

    @property
    def duration(self) -> float:
        return self.n_samples / self.sample_rate_hz


@dataclass
class SynthConfig:
    n_electrodes: int = 16
    neural_latency_ms: float = 187.5
    eeg_snr_db: float = 0.0
    envelope_cutoff_hz: float = 8.0
    mix_snr_db: float = 0.0
    trial_seconds: float = 60.0
    seed: int = 0
    audio_rate_hz: int = 14700
    eeg_rate_hz: int = EEG_RATE_HZ
    carrier_band_hz: tuple = (150.0, 3000.0)  # range for each source's carrier centre
    carrier_gap_octaves: float = 0.0  # minimum spacing of the two carrier centres
    spatial_weights: Optional[Sequence[float]] = None  # overrides the random pattern

    def validate(self):
        if self.n_electrodes < 2:
            raise ValueError(f"need at least 2 electrodes, got {self.n_electrodes}")
        if self.trial_seconds <= 0:
            raise ValueError("trial_seconds must be positive")
        if not 0 <= self.neural_latency_ms < self.trial_seconds * 1000:
            raise ValueError(
                f"neural latency {self.neural_latency_ms} ms must be in [0, trial duration)"
            )
        if not 0 < self.envelope_cutoff_hz < self.eeg_rate_hz / 2:
            raise ValueError("envelope cutoff must lie below the EEG Nyquist frequency")
        if self.spatial_weights is not None and len(self.spatial_weights) != self.n_electrodes:
            raise ValueError("spatial_weights must have one entry per electrode")
        lo, hi = self.carrier_band_hz
        span = math.log2(min(hi, 0.4 * self.audio_rate_hz) / lo)
        if not 0 <= self.carrier_gap_octaves < span:
            raise ValueError(f"carrier gap must lie in [0, {span:.2f}) octaves for this band and rate")


@dataclass
class Trial:
    mixture: AudioWave
    target: AudioWave
    interferer: AudioWave
    eeg: EegRecord
    trial_id: str = "trial0"


@dataclass
class SegmentPair:
    mixture: AudioWave
    target: AudioWave
    interferer: AudioWave
    eeg: EegRecord
    trial_id: str
    segment_index: int
    split: str
    meta: Dict = field(default_factory=dict)

    def __post_init__(self):
        n = len(self.mixture)
        rate = self.mixture.sample_rate_hz
        for w in (self.target, self.interferer):
            if len(w) != n or w.sample_rate_hz != rate:
                raise ValueError("mixture, target and interferer must share length and rate")
        if abs(self.eeg.duration - self.mixture.duration) > 1.0 / self.eeg.sample_rate_hz + 1e-9:
            raise ValueError("EEG and audio durations differ by more than one EEG sample")

    @property
    def segment_id(self) -> str:
        return f"{self.trial_id}-{self.segment_index:04d}"


# ---------------------------------------------------------------- resampling


def resample_array(x: np.ndarray, source_hz: int, target_hz: int) -> np.ndarray:
    """Polyphase resampling along the last axis; length = round(n * target / source)."""
    if target_hz <= 0 or source_hz <= 0:
        raise ValueError(f"sample rates must be positive, got {source_hz} -> {target_hz}")
    x = np.asarray(x)
    if target_hz == source_hz:
        return x.copy()
    ratio = Fraction(int(target_hz), int(source_hz))
    y = signal.resample_poly(x, ratio.numerator, ratio.denominator, axis=-1)
    n_out = int(round(x.shape[-1] * target_hz / source_hz))
    if y.shape[-1] > n_out:
        y = y[..., :n_out]
    elif y.shape[-1] < n_out:
        pad = [(0, 0)] * (y.ndim - 1) + [(0, n_out - y.shape[-1])]
        y = np.pad(y, pad)
    return y


def resample(wave_: AudioWave, target_hz: int) -> AudioWave:
    """Band-limited resampling of a waveform to ``target_hz``."""
    if target_hz <= 0:
        raise ValueError(f"target rate must be positive, got {target_hz}")
    return AudioWave(resample_array(wave_.samples, wave_.sample_rate_hz, target_hz), target_hz)


# ---------------------------------------------------------------- synthesis


def _band_noise(rng, n, rate, lo, hi, order=4):
    noise = rng.standard_normal(n)
    sos = signal.butter(order, [lo, hi], btype="bandpass", fs=rate, output="sos")
    out = signal.sosfiltfilt(sos, noise)
    return out / (out.std() + 1e-12)


def _carrier_centre(rng, rate, carrier_band):
    lo, hi = carrier_band
    hi = min(hi, 0.4 * rate)
    return math.exp(rng.uniform(math.log(lo), math.log(hi)))


def _carrier_pair(rng, rate, carrier_band, gap_octaves):
    # rejection sampling keeps both centres log-uniform given the gap
    for _ in range(10_000):
        a, b = _carrier_centre(rng, rate, carrier_band), _carrier_centre(rng, rate, carrier_band)
        if abs(math.log2(a / b)) >= gap_octaves:
            return a, b
    raise RuntimeError("could not draw carrier centres with the requested gap")


def _speech_like(rng, n, rate, carrier_band, centre=None):
    if centre is None:
        centre = _carrier_centre(rng, rate, carrier_band)
    f_lo = max(centre / math.sqrt(2), 20.0)
    f_hi = min(centre * math.sqrt(2), 0.45 * rate)
    carrier = _band_noise(rng, n, rate, f_lo, f_hi)
    # syllabic envelope: 2-8 Hz modulation, squashed to (0, 1) with near-silent pauses
    mod = _band_noise(rng, n, rate, 2.0, 8.0, order=2)
    env = 0.5 * (1.0 + np.tanh(1.5 * mod))
    src = env * carrier
    return src / np.sqrt(np.mean(src ** 2))


def target_envelope(target: np.ndarray, audio_rate: int, cutoff_hz: float,
                    eeg_rate: int = EEG_RATE_HZ) -> np.ndarray:
    """Low-passed amplitude envelope of ``target`` at the EEG sample rate."""
    env = np.abs(signal.hilbert(target))
    sos = signal.butter(4, cutoff_hz, btype="lowpass", fs=audio_rate, output="sos")
    env = signal.sosfiltfilt(sos, env)
    return resample_array(env, audio_rate, eeg_rate)


def latency_samples(latency_ms: float, eeg_rate: int = EEG_RATE_HZ) -> int:
    return int(round(latency_ms * eeg_rate / 1000.0))


def electrode_positions(n: int) -> np.ndarray:
    """Stand-in montage: fixed pseudo-random points on the upper unit hemisphere.

    Depends only on ``n`` so every synthetic trial (and the model's graph) agree.
    """
    v = np.random.default_rng(7919 + n).standard_normal((n, 3))
    v[:, 2] = np.abs(v[:, 2])
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def synth_trial(config: SynthConfig, trial_id: str = "trial0") -> Trial:
    """Generate one two-talker trial and its pseudo-EEG; deterministic given ``config.seed``."""
    config.validate()
    rng = np.random.default_rng(config.seed)
    rate = config.audio_rate_hz
    n = int(round(config.trial_seconds * rate))

    if config.carrier_gap_octaves > 0:
        c_t, c_i = _carrier_pair(rng, rate, config.carrier_band_hz, config.carrier_gap_octaves)
    else:
        c_t = c_i = None
    target = _speech_like(rng, n, rate, config.carrier_band_hz, c_t)
    interferer = _speech_like(rng, n, rate, config.carrier_band_hz, c_i)
    # target/interferer power ratio equals mix_snr_db
    interferer *= 10.0 ** (-config.mix_snr_db / 20.0)
    mixture = target + interferer
    peak = np.max(np.abs(mixture))
    scale = 0.9 / peak if peak > 0 else 1.0
    target, interferer = target * scale, interferer * scale
    mixture = target + interferer

    env = target_envelope(target, rate, config.envelope_cutoff_hz, config.eeg_rate_hz)
    lag = latency_samples(config.neural_latency_ms, config.eeg_rate_hz)
    delayed = np.zeros_like(env)
    delayed[lag:] = env[: env.size - lag]

    if config.spatial_weights is not None:
        weights = np.asarray(config.spatial_weights, dtype=np.float64)
    else:
        weights = rng.standard_normal(config.n_electrodes)
    eeg = weights[:, None] * delayed[None, :]
    positions = electrode_positions(config.n_electrodes)
    if math.isfinite(config.eeg_snr_db):
        power = np.mean(eeg ** 2, axis=1, keepdims=True)
        sigma = np.sqrt(power / 10.0 ** (config.eeg_snr_db / 10.0))
        eeg = eeg + sigma * rng.standard_normal(eeg.shape)

    ids = [f"E{i + 1}" for i in range(config.n_electrodes)]
    return Trial(
        mixture=AudioWave(mixture, rate),
        target=AudioWave(target, rate),
        interferer=AudioWave(interferer, rate),
        eeg=EegRecord(eeg, config.eeg_rate_hz, ids, positions),
        trial_id=trial_id,
    )


def lagged_correlation(x: np.ndarray, ref: np.ndarray, max_lag: int) -> np.ndarray:
    """Pearson correlation of x[t] with ref[t - lag] over the overlap, for lag = 0..max_lag."""
    out = np.empty(max_lag + 1)
    for lag in range(max_lag + 1):
        a = x[lag:]
        b = ref[: ref.size - lag]
        a = a - a.mean()
        b = b - b.mean()
        den = np.sqrt(np.dot(a, a) * np.dot(b, b))
        out[lag] = np.dot(a, b) / den if den > 0 else 0.0
    return out


# ---------------------------------------------------------------- segmentation


def _samples_per(seconds, rate):
    n = seconds * rate
    if abs(n - round(n)) > 1e-6:
        raise ValueError(f"{seconds} s is not a whole number of samples at {rate} Hz")
    return int(round(n))


def segment_trial(trial: Trial, seg_seconds: float, split: str) -> List[SegmentPair]:
    """Cut a trial into consecutive non-overlapping segments; the short tail is dropped."""
    rate = trial.mixture.sample_rate_hz
    erate = trial.eeg.sample_rate_hz
    if abs(trial.eeg.duration - trial.mixture.duration) > 1.0 / erate + 1e-9:
        raise ValueError("trial audio and EEG do not cover the same time span")
    seg_a = _samples_per(seg_seconds, rate)
    seg_e = _samples_per(seg_seconds, erate)
    count = min(len(trial.mixture) // seg_a, trial.eeg.n_samples // seg_e)
    if count == 0:
        warnings.warn(
            f"segment length {seg_seconds} s exceeds trial {trial.trial_id} "
            f"({trial.mixture.duration:.3f} s); no segments produced"
        )
        return []
    pairs = []
    for k in range(count):
        a0, e0 = k * seg_a, k * seg_e
        cut = slice(a0, a0 + seg_a)
        pairs.append(SegmentPair(
            mixture=AudioWave(trial.mixture.samples[cut], rate),
            target=AudioWave(trial.target.samples[cut], rate),
            interferer=AudioWave(trial.interferer.samples[cut], rate),
            eeg=EegRecord(trial.eeg.data[:, e0:e0 + seg_e], erate,
                          trial.eeg.electrode_ids, trial.eeg.positions),
            trial_id=trial.trial_id,
            segment_index=k,
            split=split,
            meta={"start_seconds": a0 / rate},
        ))
    return pairs


def split_counts(n: int, fractions: Dict[str, float]) -> Dict[str, int]:
    """Largest-remainder apportionment of ``n`` items to named fractions."""
    total = sum(fractions.values())
    if total <= 0:
        raise ValueError("split fractions must sum to a positive value")
    raw = {k: n * v / total for k, v in fractions.items()}
    counts = {k: int(math.floor(v)) for k, v in raw.items()}
    left = n - sum(counts.values())
    for k in sorted(raw, key=lambda k: (raw[k] - counts[k]), reverse=True)[:left]:
        counts[k] += 1
    return counts


def make_corpus(base: SynthConfig, n_trials: int, train_seconds: float = 2.0,
                test_seconds: float = 20.0,
                fractions: Optional[Dict[str, float]] = None) -> List[SegmentPair]:
    """Synthesize ``n_trials`` trials and segment them, assigning whole trials to splits.

    Train/valid trials are cut into ``train_seconds`` segments and test trials into
    ``test_seconds`` segments. With a single trial, its segments are split instead.
    """
    fractions = fractions or {"train": 0.8, "valid": 0.1, "test": 0.1}
    trials = []
    for i in range(n_trials):
        cfg = SynthConfig(**{**base.__dict__, "seed": base.seed * 100003 + i})
        trials.append(synth_trial(cfg, trial_id=f"trial{i:03d}"))
    if n_trials == 1:
        pairs = segment_trial(trials[0], train_seconds, "train")
        counts = split_counts(len(pairs), fractions)
        labels = [name for name, c in counts.items() for _ in range(c)]
        for p, lab in zip(pairs, labels):
            p.split = lab
        return pairs
    counts = split_counts(n_trials, fractions)
    labels = [name for name, c in counts.items() for _ in range(c)]
    pairs = []
    for trial, lab in zip(trials, labels):
        seconds = test_seconds if lab == "test" else train_seconds
        pairs.extend(segment_trial(trial, seconds, lab))
    return pairs


# ---------------------------------------------------------------- file formats


def write_wav(path, wave_: AudioWave) -> None:
    """Mono 16-bit PCM WAV."""
    pcm = np.clip(np.round(wave_.samples * 32768.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as f:
        f.setnchannels(1)
        f.setsampwidth(2)
        f.setframerate(wave_.sample_rate_hz)
        f.writeframes(pcm.tobytes())


def read_wav(path) -> AudioWave:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    with wave.open(str(path), "rb") as f:
        if f.getsampwidth() != 2 or f.getnchannels() != 1:
            raise ValueError(f"{path}: expected mono 16-bit PCM")
        rate = f.getframerate()
        pcm = np.frombuffer(f.readframes(f.getnframes()), dtype="<i2")
    return AudioWave(pcm.astype(np.float64) / 32768.0, rate)


def write_eeg(stem, record: EegRecord) -> tuple:
    """Write ``<stem>.f32`` (little-endian float32, channel-major) and ``<stem>.json``."""
    stem = Path(stem)
    bin_path = stem.with_suffix(".f32")
    meta_path = stem.with_suffix(".json")
    record.data.astype("<f4").tofile(bin_path)
    meta = {
        "n_channels": record.n_channels,
        "n_samples": record.n_samples,
        "rate_hz": record.sample_rate_hz,
        "electrode_ids": record.electrode_ids,
    }
    if record.positions is not None:
        meta["positions"] = record.positions.tolist()
    meta_path.write_text(json.dumps(meta))
    return bin_path, meta_path


def read_eeg(bin_path, meta_path=None) -> EegRecord:
    bin_path = Path(bin_path)
    meta_path = Path(meta_path) if meta_path else bin_path.with_suffix(".json")
    for p in (bin_path, meta_path):
        if not p.exists():
            raise FileNotFoundError(p)
    meta = json.loads(meta_path.read_text())
    raw = np.fromfile(bin_path, dtype="<f4")
    shape = (int(meta["n_channels"]), int(meta["n_samples"]))
    if raw.size != shape[0] * shape[1]:
        raise ValueError(
            f"{bin_path}: {raw.size} values on disk but sidecar declares shape {shape}"
        )
    return EegRecord(raw.reshape(shape), meta["rate_hz"], meta["electrode_ids"],
                     meta.get("positions"))


def write_manifest(pairs: Sequence[SegmentPair], root) -> Path:
    """Write waveforms, EEG blobs and a line-delimited JSON manifest under ``root``."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    header = {"type": "header", "version": MANIFEST_VERSION}
    if pairs:
        header["audio_rate_hz"] = pairs[0].mixture.sample_rate_hz
        header["eeg_rate_hz"] = pairs[0].eeg.sample_rate_hz
    lines = [json.dumps(header)]
    for p in pairs:
        if p.mixture.sample_rate_hz != header["audio_rate_hz"] or \
                p.eeg.sample_rate_hz != header["eeg_rate_hz"]:
            raise ValueError(f"segment {p.segment_id} has a different sample rate")
        sub = Path(p.split) / p.trial_id
        (root / sub).mkdir(parents=True, exist_ok=True)
        stem = sub / f"{p.segment_index:04d}"
        rec = {"type": "segment", "trial_id": p.trial_id, "segment_index": p.segment_index,
               "split": p.split}
        for name in ("mixture", "target", "interferer"):
            rel = f"{stem}_{name}.wav"
            write_wav(root / rel, getattr(p, name))
            rec[name] = rel
        bin_path, meta_path = write_eeg(root / f"{stem}_eeg", p.eeg)
        rec["eeg"] = os.path.relpath(bin_path, root)
        rec["eeg_meta"] = os.path.relpath(meta_path, root)
        if p.meta:
            rec["meta"] = p.meta
        lines.append(json.dumps(rec))
    path = root / "manifest.jsonl"
    path.write_text("\n".join(lines) + "\n")
    return path


def read_manifest(path, split: Optional[str] = None) -> List[SegmentPair]:
    """Load segments listed in a manifest; paths resolve relative to the manifest's folder."""
    path = Path(path)
    if path.is_dir():
        path = path / "manifest.jsonl"
    if not path.exists():
        raise FileNotFoundError(path)
    root = path.parent
    header = None
    pairs = []
    for line_no, line in enumerate(path.read_text().splitlines(), 1):
        if not line.strip():
            continue
        rec = json.loads(line)
        if rec.get("type") == "header":
            header = rec
            continue
        if split is not None and rec["split"] != split:
            continue
        waves = {name: read_wav(root / rec[name]) for name in ("mixture", "target", "interferer")}
        eeg = read_eeg(root / rec["eeg"], root / rec["eeg_meta"])
        if header is not None and "audio_rate_hz" in header:
            if waves["mixture"].sample_rate_hz != header["audio_rate_hz"]:
                raise ValueError(f"{path}:{line_no}: audio rate differs from manifest header")
            if eeg.sample_rate_hz != header["eeg_rate_hz"]:
                raise ValueError(f"{path}:{line_no}: EEG rate differs from manifest header")
        pairs.append(SegmentPair(eeg=eeg, trial_id=rec["trial_id"],
                                 segment_index=int(rec["segment_index"]), split=rec["split"],
                                 meta=rec.get("meta", {}), **waves))
    return pairs


def stack_batch(pairs: Sequence[SegmentPair]):
    """Stack segments into float arrays: mixture/target (B, 1, T) and EEG (B, N, T_eeg)."""
    mix = np.stack([p.mixture.samples for p in pairs])[:, None, :]
    tgt = np.stack([p.target.samples for p in pairs])[:, None, :]
    eeg = np.stack([p.eeg.data for p in pairs]).astype(np.float64)
    return mix, tgt, eeg
