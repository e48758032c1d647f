"""Command-line entry point: synth, train, evaluate, extract, inspect, ablate."""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np
import torch

from .config import PRESETS, ModelConfig, preset
from .datasets import (AudioWave, SynthConfig, make_corpus, read_eeg, read_manifest, read_wav,
                       write_manifest, write_wav)
from .evaluate import evaluate_corpus, format_summary
from .extractor import TargetSpeakerExtractor, extract_long
from .training import (TrainConfig, ablate, load_checkpoint, parse_values, train)

INSPECT_ORDER = ("X_1", "X_2", "X_3", "X_4", "X_hat", "X_tilde", "E_prime", "E_tilde",
                 "S_feat", "Y", "M", "X_en", "S_hat", "s_hat")
INSPECT_LABELS = {"X_hat": "X̂", "X_tilde": "X̃", "E_prime": "E′", "E_tilde": "Ẽ", "S_hat": "Ŝ",
                  "s_hat": "ŝ"}


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def model_config_from_args(args) -> ModelConfig:
    overrides = {}
    for item in args.set or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise ValueError(f"--set expects key=value, got {item!r}")
        overrides[key.replace("-", "_")] = _parse_value(value)
    return preset(args.preset, **overrides)


def train_config_from_args(args) -> TrainConfig:
    if args.config:
        cfg = TrainConfig.from_file(args.config)
    else:
        cfg = TrainConfig(model=model_config_from_args(args))
    changes = {k: v for k, v in {"peak_lr": args.lr, "epochs": args.epochs,
                                 "batch_size": args.batch_size, "lam": args.lam,
                                 "seed": args.seed, "dtype": args.dtype,
                                 "dynamic_mixing": args.dynamic_mixing}.items() if v is not None}
    if args.manifest:
        changes["train_manifest"] = changes["valid_manifest"] = str(args.manifest)
    return dataclasses.replace(cfg, **changes)


def _add_model_args(p, default_preset):
    p.add_argument("--preset", choices=sorted(PRESETS), default=default_preset)
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override a model config field (JSON value), repeatable")


def _add_train_args(p):
    p.add_argument("--config", help="TrainConfig JSON file")
    p.add_argument("--manifest", help="corpus folder or manifest.jsonl")
    p.add_argument("--lr", type=float, help="peak learning rate (default 6e-4)")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--lam", type=float, help="InfoNCE weight; 0 trains the w/o Alignment variant")
    p.add_argument("--seed", type=int)
    p.add_argument("--dtype", choices=["float32", "float64"])
    p.add_argument("--dynamic-mixing", action="store_true", default=None,
                   help="re-pair each target with a source from another trial every batch")
    _add_model_args(p, "desk")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="eegtse", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a synthetic mixture + pseudo-EEG corpus")
    p.add_argument("--trials", type=int, required=True)
    p.add_argument("--seconds", type=float, default=60.0, help="trial duration")
    p.add_argument("--latency-ms", type=float, default=187.5)
    p.add_argument("--out", required=True)
    p.add_argument("--electrodes", type=int, default=16)
    p.add_argument("--rate", type=int, default=14700, help="audio rate in Hz")
    p.add_argument("--eeg-snr-db", type=float, default=0.0)
    p.add_argument("--mix-snr-db", type=float, default=0.0)
    p.add_argument("--carrier-gap-octaves", type=float, default=0.0,
                   help="minimum spacing of the two sources' carrier centres")
    p.add_argument("--segment-seconds", type=float, default=2.0)
    p.add_argument("--test-seconds", type=float, default=20.0)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("train", help="train a model on a manifest")
    _add_train_args(p)
    p.add_argument("--out", required=True)

    p = sub.add_parser("evaluate", help="score a checkpoint on a manifest split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--out", required=True)
    p.add_argument("--figure", help="figure file name written inside --out")

    p = sub.add_parser("extract", help="extract the attended speaker from one recording")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--mixture", required=True, help="mixture WAV")
    p.add_argument("--eeg", required=True, help="EEG .f32 blob with its .json sidecar")
    p.add_argument("--out", required=True, help="estimate WAV")

    p = sub.add_parser("inspect", help="print every intermediate shape for a dry-run batch")
    _add_model_args(p, "full")
    p.add_argument("--batch", type=int, default=2)
    p.add_argument("--json", action="store_true", help="print shapes as JSON")

    p = sub.add_parser("ablate", help="train and score one model per grid value")
    _add_train_args(p)
    p.add_argument("--axis", choices=["gm-layers", "variant"], required=True)
    p.add_argument("--values", required=True, help="'1..5' or 'full,wo-gm,wo-align'")
    p.add_argument("--out", required=True)
    return parser


def cmd_synth(args):
    base = SynthConfig(n_electrodes=args.electrodes, neural_latency_ms=args.latency_ms,
                       eeg_snr_db=args.eeg_snr_db, mix_snr_db=args.mix_snr_db,
                       trial_seconds=args.seconds, seed=args.seed, audio_rate_hz=args.rate,
                       carrier_gap_octaves=args.carrier_gap_octaves)
    base.validate()
    pairs = make_corpus(base, args.trials, args.segment_seconds, args.test_seconds)
    path = write_manifest(pairs, args.out)
    counts = {}
    for p in pairs:
        counts[p.split] = counts.get(p.split, 0) + 1
    print(f"wrote {len(pairs)} segments {counts} to {path}")
    return 0


def cmd_train(args):
    cfg = train_config_from_args(args)
    if not cfg.train_manifest:
        raise ValueError("train needs --manifest or a config with train_manifest")
    result = train(cfg, args.out)
    print(f"best checkpoint {result['best']} (valid SI-SDR {result['best_valid_si_sdr']:.2f} dB)")
    return 0


def cmd_evaluate(args):
    model, _, _, _ = load_checkpoint(args.checkpoint, restore_rng=False)
    pairs = read_manifest(args.manifest, split=args.split)
    if not pairs:
        raise ValueError(f"no {args.split!r} segments in {args.manifest}")
    _, summary = evaluate_corpus(model, pairs, args.out, args.figure)
    print(format_summary(summary))
    return 0


def cmd_extract(args):
    model, _, _, _ = load_checkpoint(args.checkpoint, restore_rng=False)
    mix = read_wav(args.mixture)
    eeg = read_eeg(args.eeg)
    cfg = model.config
    if mix.sample_rate_hz != cfg.sample_rate:
        raise ValueError(f"mixture rate {mix.sample_rate_hz} Hz, model expects {cfg.sample_rate}")
    if eeg.n_channels != cfg.n_electrodes:
        raise ValueError(f"EEG has {eeg.n_channels} channels, model expects {cfg.n_electrodes}")
    est = extract_long(model, mix.samples, eeg.data)
    peak = np.max(np.abs(est))
    if peak > 1:
        est = est / peak
    write_wav(args.out, AudioWave(est, mix.sample_rate_hz))
    print(f"wrote {args.out}")
    return 0


def inspect_shapes(config: ModelConfig, batch: int = 2) -> dict:
    torch.manual_seed(0)
    model = TargetSpeakerExtractor(config).eval()
    mix = torch.randn(batch, 1, config.segment_samples) * 0.1
    eeg = torch.randn(batch, config.n_electrodes, config.eeg_samples)
    with torch.no_grad():
        _, _, inter = model(mix, eeg, return_intermediates=True)
    return {k: tuple(inter[k].shape) for k in INSPECT_ORDER}


def cmd_inspect(args):
    cfg = model_config_from_args(args)
    shapes = inspect_shapes(cfg, args.batch)
    if args.json:
        print(json.dumps({k: list(v) for k, v in shapes.items()}))
        return 0
    print(f"mixture: (B,1,{cfg.segment_samples})  eeg: (B,{cfg.n_electrodes},{cfg.eeg_samples})"
          f"  B={args.batch}")
    for key, shape in shapes.items():
        dims = ",".join(["B"] + [str(d) for d in shape[1:]])
        print(f"{INSPECT_LABELS.get(key, key)}: ({dims})")
    return 0


def cmd_ablate(args):
    cfg = train_config_from_args(args)
    if not cfg.train_manifest:
        raise ValueError("ablate needs --manifest")
    train_pairs = read_manifest(cfg.train_manifest, split="train")
    valid_pairs = read_manifest(cfg.train_manifest, split="valid")
    test_pairs = read_manifest(cfg.train_manifest, split="test")
    values = parse_values(args.values)
    Path(args.out).mkdir(parents=True, exist_ok=True)
    (Path(args.out) / "ablation.jsonl").write_text("")
    rows = ablate(cfg, args.axis, values, args.out, train_pairs, test_pairs or valid_pairs,
                  valid_pairs)
    for row in rows:
        print(json.dumps(row))
    return 0


COMMANDS = {"synth": cmd_synth, "train": cmd_train, "evaluate": cmd_evaluate,
            "extract": cmd_extract, "inspect": cmd_inspect, "ablate": cmd_ablate}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
