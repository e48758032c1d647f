"""EEG-cued target speaker extraction with multi-scale selective-scan speech encoding."""

from .config import ModelConfig, desk_config, mini_config, full_config, preset
from .datasets import SynthConfig, make_corpus, read_manifest, synth_trial, write_manifest
from .extractor import TargetSpeakerExtractor, extract_long
from .metrics import estoi, sdr, si_sdr, stoi, total_loss
from .training import TrainConfig, load_checkpoint, lr_schedule, save_checkpoint, train

__all__ = [
    "ModelConfig", "desk_config", "mini_config", "full_config", "preset",
    "SynthConfig", "make_corpus", "read_manifest", "synth_trial", "write_manifest",
    "TargetSpeakerExtractor", "extract_long",
    "estoi", "sdr", "si_sdr", "stoi", "total_loss",
    "TrainConfig", "load_checkpoint", "lr_schedule", "save_checkpoint", "train",
]
