import json

import numpy as np
import pytest
import torch

from eegtse.cli import build_parser, inspect_shapes, main, train_config_from_args
from eegtse.config import mini_config
from eegtse.datasets import read_manifest, read_wav
from eegtse.evaluate import evaluate_pairs, summarize
from eegtse.extractor import TargetSpeakerExtractor

SYNTH = ["synth", "--trials", "10", "--seconds", "0.5", "--rate", "1600", "--electrodes", "4",
         "--segment-seconds", "0.25", "--test-seconds", "0.5"]


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("corpus")
    assert main(SYNTH + ["--out", str(root)]) == 0
    return root


@pytest.fixture(scope="module")
def checkpoint(corpus, tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    rc = main(["train", "--preset", "mini", "--manifest", str(corpus), "--epochs", "1",
               "--batch-size", "2", "--out", str(out)])
    assert rc == 0
    return out / "best"


def test_summary_median():
    recs = [{"segment_id": str(i), "metric": "si_sdr", "value": v, "system": "estimate"}
            for i, v in enumerate([1.0, 3.0, 5.0])]
    recs += [{"segment_id": str(i), "metric": "si_sdr", "value": 0.0, "system": "mixture"}
             for i in range(3)]
    out = summarize(recs)
    assert out["estimate_si_sdr"] == 3.0 and out["si_sdri_median"] == 3.0


def test_evaluate_has_mixture_rows_and_is_deterministic(corpus):
    pairs = read_manifest(corpus, split="test")
    model = TargetSpeakerExtractor(mini_config())
    a = evaluate_pairs(model, pairs)
    b = evaluate_pairs(model, pairs)
    assert a == b
    metrics = {r["metric"] for r in a}
    for m in metrics:
        assert any(r["system"] == "mixture" and r["metric"] == m for r in a)
    assert {"si_sdr", "sdr"} <= metrics


def test_synth_manifest(corpus):
    pairs = read_manifest(corpus)
    assert {p.split for p in pairs} == {"train", "valid", "test"}
    assert all(len(p.mixture) == 800 for p in pairs if p.split == "test")


def test_train_default_lr():
    args = build_parser().parse_args(["train", "--manifest", "x", "--out", "y"])
    assert train_config_from_args(args).peak_lr == 6e-4
    args = build_parser().parse_args(["train", "--manifest", "x", "--out", "y", "--lr", "6e-4"])
    assert train_config_from_args(args).peak_lr == 6e-4


def test_set_overrides():
    args = build_parser().parse_args(["inspect", "--preset", "mini", "--set", "gm_layers=3",
                                      "--set", "scale-fusion=sum"])
    from eegtse.cli import model_config_from_args
    cfg = model_config_from_args(args)
    assert cfg.gm_layers == 3 and cfg.scale_fusion == "sum"


def test_unknown_flag_usage(capsys):
    assert main(["inspect", "--bogus"]) != 0
    assert "usage" in capsys.readouterr().err


def test_inspect_output(capsys):
    assert main(["inspect", "--preset", "mini"]) == 0
    out = capsys.readouterr().out
    assert "X̃: (B,8,99,4)" in out and "E′: (B,4,4)" in out and "M: (B,8,99)" in out
    assert "ŝ: (B,1,400)" in out


def test_inspect_shapes_function():
    shapes = inspect_shapes(mini_config(), batch=3)
    assert shapes["Y"] == (3, 4, 99) and shapes["S_hat"] == (3, 8, 99)


def test_evaluate_and_extract(corpus, checkpoint, tmp_path, capsys):
    assert main(["evaluate", "--checkpoint", str(checkpoint), "--manifest", str(corpus),
                 "--out", str(tmp_path / "ev"), "--figure", "metrics.png"]) == 0
    rows = [json.loads(x) for x in (tmp_path / "ev" / "report.jsonl").read_text().splitlines()]
    assert {"segment_id", "metric", "value", "system"} <= set(rows[0])
    assert (tmp_path / "ev" / "summary.json").exists()
    assert (tmp_path / "ev" / "metrics.png").exists()
    seg = read_manifest(corpus, split="test")[0]
    rec = json.loads((corpus / "manifest.jsonl").read_text().splitlines()[-1])
    out_wav = tmp_path / "est.wav"
    assert main(["extract", "--checkpoint", str(checkpoint), "--mixture", str(corpus / rec["mixture"]),
                 "--eeg", str(corpus / rec["eeg"]), "--out", str(out_wav)]) == 0
    est = read_wav(out_wav)
    assert len(est) == len(seg.mixture) and est.sample_rate_hz == 1600


def test_extract_rate_mismatch(checkpoint, tmp_path, capsys):
    from eegtse.datasets import AudioWave, EegRecord, write_eeg, write_wav
    write_wav(tmp_path / "m.wav", AudioWave(np.zeros(100) + 0.1, 8000))
    write_eeg(tmp_path / "e", EegRecord(np.zeros((4, 10)), 128, list("abcd")))
    rc = main(["extract", "--checkpoint", str(checkpoint), "--mixture", str(tmp_path / "m.wav"),
               "--eeg", str(tmp_path / "e.f32"), "--out", str(tmp_path / "o.wav")])
    assert rc == 2 and "rate" in capsys.readouterr().err


def test_ablate_variants(corpus, tmp_path, capsys):
    rc = main(["ablate", "--preset", "mini", "--manifest", str(corpus), "--epochs", "1",
               "--batch-size", "4", "--axis", "variant", "--values", "full,wo-gm,wo-align",
               "--out", str(tmp_path)])
    assert rc == 0
    rows = [json.loads(x) for x in (tmp_path / "ablation.jsonl").read_text().splitlines()]
    assert [r["value"] for r in rows] == ["full", "wo-gm", "wo-align"]
    assert rows[2]["tag"] == "w/o Alignment"
    assert rows[1]["n_params"] < rows[0]["n_params"]


def test_dynamic_mixing_and_carrier_gap_flags(tmp_path, capsys):
    args = build_parser().parse_args(["train", "--out", "x", "--dynamic-mixing"])
    assert train_config_from_args(args).dynamic_mixing
    args = build_parser().parse_args(["train", "--out", "x"])
    assert not train_config_from_args(args).dynamic_mixing
    assert main(["synth", "--trials", "2", "--seconds", "0.5", "--rate", "1000", "--electrodes", "2",
                 "--segment-seconds", "0.25", "--test-seconds", "0.5", "--carrier-gap-octaves", "1.0",
                 "--out", str(tmp_path / "c")]) == 0
    # a gap wider than the carrier range is a config error
    assert main(["synth", "--trials", "2", "--seconds", "0.5", "--rate", "1000",
                 "--carrier-gap-octaves", "5", "--out", str(tmp_path / "d")]) == 2
