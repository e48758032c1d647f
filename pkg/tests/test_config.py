import pytest

from eegtse.config import ModelConfig, ms_to_even_samples, preset


def test_even_rounding():
    assert [ms_to_even_samples(ms, 14_700) for ms in (2.5, 5, 10, 20)] == [36, 74, 148, 294]
    assert ms_to_even_samples(1.0, 1000) == 2  # ties round up


def test_full_frames():
    cfg = ModelConfig()
    assert cfg.segment_samples == 29_400 and cfg.eeg_samples == 256
    assert cfg.speech_frames() == 1632


@pytest.mark.parametrize("bad", [
    {"kernel_lengths": (8, 8, 16, 32)},
    {"kernel_lengths": (9, 16, 32, 64)},
    {"chunk_size": 25},
    {"eeg_channels": 6, "attn_heads": 4},
    {"gm_layers": 6},
    {"scale_fusion": "mean"},
])
def test_invalid_configs(bad):
    with pytest.raises(ValueError):
        ModelConfig(**bad)


def test_presets():
    assert preset("desk").speech_channels == 32
    assert preset("mini", gm_layers=4).gm_layers == 4
    assert preset("lab").segment_samples == 1000
    with pytest.raises(ValueError):
        preset("huge")
    with pytest.raises(ValueError):
        ModelConfig.from_dict({"nope": 1})
