"""Corpus evaluation: per-segment metrics, median summary, JSONL report and an optional figure."""

from __future__ import annotations

import json
import logging
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np
import torch

from .datasets import SegmentPair
from .extractor import extract_long
from .metrics import estoi, sdr, si_sdr, stoi

log = logging.getLogger(__name__)

SYSTEMS = ("estimate", "mixture")


def _metrics(ref, est, fs) -> Dict[str, float]:
    out = {"si_sdr": si_sdr(ref, est), "sdr": sdr(ref, est)}
    try:
        out["stoi"] = stoi(ref, est, fs)
        out["estoi"] = estoi(ref, est, fs)
    except ValueError as exc:
        # segments shorter than one STOI analysis window only get the energy metrics
        log.debug("skipping STOI: %s", exc)
    return out


def evaluate_pairs(model, pairs: Sequence[SegmentPair]) -> List[dict]:
    """One record per (segment, system, metric); the mixture rows give the baseline."""
    model.eval()
    records = []
    with torch.no_grad():
        for p in pairs:
            fs = p.mixture.sample_rate_hz
            est = extract_long(model, p.mixture.samples, p.eeg.data)
            ref = p.target.samples.astype(np.float64)
            for system, sig in (("estimate", est), ("mixture", p.mixture.samples)):
                for metric, value in _metrics(ref, sig, fs).items():
                    records.append({"segment_id": p.segment_id, "metric": metric,
                                    "value": value, "system": system})
    return records


def summarize(records: Sequence[dict]) -> Dict[str, float]:
    """Medians per system and metric, plus the median per-segment SI-SDR improvement."""
    table: Dict[str, List[float]] = {}
    for r in records:
        table.setdefault(f"{r['system']}_{r['metric']}", []).append(r["value"])
    out = {k: float(np.median(v)) for k, v in sorted(table.items())}
    est = {r["segment_id"]: r["value"] for r in records
           if r["system"] == "estimate" and r["metric"] == "si_sdr"}
    mix = {r["segment_id"]: r["value"] for r in records
           if r["system"] == "mixture" and r["metric"] == "si_sdr"}
    gains = [est[k] - mix[k] for k in est if k in mix]
    if gains:
        out["si_sdri_median"] = float(np.median(gains))
        out["si_sdri_mean"] = float(np.mean(gains))
    out["n_segments"] = len(est)
    return out


def format_summary(summary: Dict[str, float]) -> str:
    width = max(len(k) for k in summary)
    return "\n".join(f"{k:<{width}}  {v:10.4f}" if isinstance(v, float) else f"{k:<{width}}  {v:>10}"
                     for k, v in summary.items())


def write_report(records: Sequence[dict], summary: Dict[str, float], out_dir) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    with (out_dir / "report.jsonl").open("w") as f:
        for r in records:
            f.write(json.dumps(r) + "\n")
    (out_dir / "summary.json").write_text(json.dumps(summary, indent=2))
    (out_dir / "summary.txt").write_text(format_summary(summary) + "\n")
    return out_dir / "report.jsonl"


def plot_report(records: Sequence[dict], path) -> Optional[Path]:
    """Violin plot of each metric for estimate vs mixture; skipped when matplotlib is absent."""
    try:
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError:
        log.warning("matplotlib not installed; no figure written")
        return None
    metrics = sorted({r["metric"] for r in records})
    fig, axes = plt.subplots(1, len(metrics), figsize=(3.2 * len(metrics), 3.2), squeeze=False)
    for ax, metric in zip(axes[0], metrics):
        data = [[r["value"] for r in records if r["metric"] == metric and r["system"] == s]
                for s in SYSTEMS]
        ax.violinplot(data, showmedians=True)
        ax.set_xticks([1, 2], SYSTEMS)
        ax.set_title(metric)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return Path(path)


def evaluate_corpus(model, pairs: Sequence[SegmentPair], out_dir, figure: Optional[str] = None):
    records = evaluate_pairs(model, pairs)
    summary = summarize(records)
    write_report(records, summary, out_dir)
    if figure:
        plot_report(records, Path(out_dir) / figure)
    return records, summary
