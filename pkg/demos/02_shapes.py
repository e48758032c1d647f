"""
Walking a batch through the network
===================================

Every intermediate tensor of the full-size model for one dry-run batch.
The same table is printed by ``eegtse inspect``.
"""

from eegtse.cli import inspect_shapes
from eegtse.config import mini_config, full_config

for name, cfg in (("full size", full_config()), ("mini", mini_config())):
    print(f"{name}: {cfg.segment_samples} audio samples, {cfg.n_electrodes} x {cfg.eeg_samples} EEG, "
          f"{cfg.speech_frames()} speech frames")
    for key, shape in inspect_shapes(cfg, batch=1).items():
        print(f"  {key:8s} {shape}")

# parameter count of the full model
from eegtse.extractor import TargetSpeakerExtractor

model = TargetSpeakerExtractor(full_config())
print(f"parameters: {sum(p.numel() for p in model.parameters()) / 1e6:.2f} M")
