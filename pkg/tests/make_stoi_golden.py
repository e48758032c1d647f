"""Regenerate tests/data/stoi_golden.json with an independent STOI implementation (pystoi).

Run once by hand; the test suite only reads the frozen JSON. The pairs are rebuilt from
their seeds by ``golden_pair`` so no audio needs to be stored.
"""

import json
from pathlib import Path

import numpy as np
from scipy import signal

RATES = (10_000, 16_000, 14_700, 8_000, 22_050)
GOLDEN = Path(__file__).parent / "data" / "stoi_golden.json"


def golden_pair(i: int):
    rng = np.random.default_rng(1000 + i)
    fs = RATES[i % len(RATES)]
    n = int(fs * (1.2 + 0.2 * (i % 3)))
    carrier = rng.standard_normal(n)
    sos = signal.butter(4, [200, min(3500, 0.45 * fs)], btype="bandpass", fs=fs, output="sos")
    carrier = signal.sosfiltfilt(sos, carrier)
    mod = signal.sosfiltfilt(signal.butter(2, [2, 8], btype="bandpass", fs=fs, output="sos"),
                             rng.standard_normal(n))
    clean = carrier * 0.5 * (1 + np.tanh(3 * mod / mod.std()))
    clean /= np.abs(clean).max()
    snr_db = -5.0 + 2.5 * i
    noise = rng.standard_normal(n)
    noise *= np.linalg.norm(clean) / np.linalg.norm(noise) * 10 ** (-snr_db / 20)
    degraded = clean + noise
    if i % 2:
        degraded = signal.lfilter([1, -0.7], [1], degraded)
    return clean, degraded, fs


def main():
    from pystoi import stoi

    rows = []
    for i in range(10):
        clean, degraded, fs = golden_pair(i)
        rows.append({"index": i, "fs": fs, "n": len(clean),
                     "stoi": float(stoi(clean, degraded, fs, extended=False)),
                     "estoi": float(stoi(clean, degraded, fs, extended=True))})
    GOLDEN.parent.mkdir(exist_ok=True)
    GOLDEN.write_text(json.dumps({"reference": "pystoi 0.4.1", "pairs": rows}, indent=1) + "\n")


if __name__ == "__main__":
    main()
