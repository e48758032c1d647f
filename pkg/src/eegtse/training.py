"""Training loop, learning-rate schedule, checkpoints and the ablation grid."""

from __future__ import annotations

import dataclasses
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np
import torch

from .config import ModelConfig
from .datasets import SegmentPair, read_manifest, stack_batch
from .extractor import TargetSpeakerExtractor
from .metrics import combine, si_sdr_loss, si_sdr_torch
from .alignment import infonce_loss

log = logging.getLogger(__name__)

WO_ALIGNMENT_TAG = "w/o Alignment"
DTYPES = {"float32": torch.float32, "float64": torch.float64}


class TrainingDiverged(RuntimeError):
    pass


def lr_schedule(step: int, total_steps: int, peak_lr: float, warmup_ratio: float) -> float:
    """Linear warm-up from 0 to ``peak_lr``, then cosine decay to 0 at ``total_steps``."""
    if not 0 <= step <= total_steps:
        raise ValueError(f"step {step} outside [0, {total_steps}]")
    warmup = warmup_ratio * total_steps
    if step < warmup:
        return peak_lr * step / warmup
    if total_steps <= warmup:
        return peak_lr
    progress = (step - warmup) / (total_steps - warmup)
    return peak_lr * 0.5 * (1.0 + math.cos(math.pi * progress))


@dataclass
class TrainConfig:
    epochs: int = 60
    batch_size: int = 8
    peak_lr: float = 6e-4
    weight_decay: float = 1e-3
    warmup_ratio: float = 0.05
    lam: float = 3.0
    seed: int = 0
    grad_clip: float = 5.0
    dtype: str = "float32"
    dynamic_mixing: bool = False
    train_manifest: Optional[str] = None
    valid_manifest: Optional[str] = None
    model: ModelConfig = field(default_factory=ModelConfig)

    def __post_init__(self):
        if isinstance(self.model, dict):
            self.model = ModelConfig.from_dict(self.model)
        if not 0 < self.warmup_ratio < 1:
            raise ValueError("warmup_ratio must lie in (0, 1)")
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2 so InfoNCE has negatives")
        if self.dtype not in DTYPES:
            raise ValueError(f"dtype must be one of {sorted(DTYPES)}")

    def to_dict(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in dataclasses.fields(self) if f.name != "model"}
        d["model"] = self.model.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return cls(**d)

    @classmethod
    def from_file(cls, path) -> "TrainConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))


# ---------------------------------------------------------------- checkpoints


def _write_blob(folder: Path, name: str, tensor: torch.Tensor) -> dict:
    arr = tensor.detach().cpu().contiguous().numpy()
    dt = arr.dtype.newbyteorder("<")
    fname = name.replace("/", ".") + ".bin"
    arr.astype(dt).tofile(folder / fname)
    return {"file": fname, "shape": list(arr.shape), "dtype": dt.str}


def _read_blob(folder: Path, entry: dict) -> torch.Tensor:
    arr = np.fromfile(folder / entry["file"], dtype=np.dtype(entry["dtype"]))
    return torch.from_numpy(arr.reshape(entry["shape"]).copy())


def save_checkpoint(path, model, optimizer, config: TrainConfig, epoch: int, step: int,
                    extra: Optional[dict] = None) -> Path:
    """Checkpoint directory: one little-endian blob per array plus JSON indices."""
    path = Path(path)
    (path / "params").mkdir(parents=True, exist_ok=True)
    (path / "optim").mkdir(exist_ok=True)
    index = {"model": {}, "optim": {}}
    for name, t in model.state_dict().items():
        index["model"][name] = _write_blob(path / "params", name, t)
    opt = optimizer.state_dict() if optimizer is not None else {"state": {}, "param_groups": []}
    for pid, st in opt["state"].items():
        for key, val in st.items():
            index["optim"][f"{pid}.{key}"] = _write_blob(path / "optim", f"{pid}.{key}", val)
    rng = _write_blob(path, "torch_rng", torch.get_rng_state())
    state = {"epoch": epoch, "step": step, "param_groups": opt["param_groups"],
             "torch_rng": rng, **(extra or {})}
    (path / "index.json").write_text(json.dumps(index, indent=1))
    (path / "state.json").write_text(json.dumps(state, indent=1))
    (path / "config.json").write_text(json.dumps(config.to_dict(), indent=2))
    return path


def load_checkpoint(path, restore_rng: bool = True):
    """Return (model, optimizer, TrainConfig, state dict) rebuilt from a checkpoint folder."""
    path = Path(path)
    if not (path / "index.json").exists():
        raise FileNotFoundError(f"no checkpoint at {path}")
    config = TrainConfig.from_file(path / "config.json")
    index = json.loads((path / "index.json").read_text())
    state = json.loads((path / "state.json").read_text())
    model = build_model(config)
    sd = {name: _read_blob(path / "params", e) for name, e in index["model"].items()}
    model.load_state_dict(sd)
    optimizer = make_optimizer(model, config)
    opt_state: Dict[int, dict] = {}
    for key, e in index["optim"].items():
        pid, name = key.split(".", 1)
        opt_state.setdefault(int(pid), {})[name] = _read_blob(path / "optim", e)
    if state["param_groups"]:
        optimizer.load_state_dict({"state": opt_state, "param_groups": state["param_groups"]})
    if restore_rng:
        torch.set_rng_state(_read_blob(path, state["torch_rng"]))
    return model, optimizer, config, state


def build_model(config: TrainConfig) -> TargetSpeakerExtractor:
    torch.manual_seed(config.seed)
    return TargetSpeakerExtractor(config.model).to(DTYPES[config.dtype])


def make_optimizer(model, config: TrainConfig):
    return torch.optim.AdamW(model.parameters(), lr=config.peak_lr, betas=(0.9, 0.999),
                             weight_decay=config.weight_decay)


# ---------------------------------------------------------------- training


def check_pairs(pairs: Sequence[SegmentPair], model_cfg: ModelConfig, what: str):
    """Surface data/model mismatches before the first optimization step."""
    for p in pairs:
        if p.mixture.sample_rate_hz != model_cfg.sample_rate:
            raise ValueError(f"{what} segment {p.segment_id}: audio rate {p.mixture.sample_rate_hz}"
                             f" != model rate {model_cfg.sample_rate}")
        if len(p.mixture) != model_cfg.segment_samples:
            raise ValueError(f"{what} segment {p.segment_id}: {len(p.mixture)} samples, model expects"
                             f" {model_cfg.segment_samples}")
        if p.eeg.data.shape != (model_cfg.n_electrodes, model_cfg.eeg_samples):
            raise ValueError(f"{what} segment {p.segment_id}: EEG shape {p.eeg.data.shape}, model "
                             f"expects {(model_cfg.n_electrodes, model_cfg.eeg_samples)}")


def to_tensors(pairs: Sequence[SegmentPair], dtype=torch.float32):
    mix, tgt, eeg = stack_batch(pairs)
    return (torch.as_tensor(mix, dtype=dtype), torch.as_tensor(tgt, dtype=dtype),
            torch.as_tensor(eeg, dtype=dtype))


def remix_batch(pairs: Sequence[SegmentPair], idx, rng, dtype=torch.float32):
    """Dynamic mixing: keep each item's target and EEG, replace its interferer.

    The new interferer is the target or the interferer (coin flip) of a segment from
    another trial, rescaled to the item's original interferer power. A source is then a
    target in some batches and a distractor in others, so only the EEG can tell them apart.
    """
    trials = np.array([p.trial_id for p in pairs])
    mixes = []
    for i in idx:
        p = pairs[i]
        others = np.flatnonzero(trials != p.trial_id)
        if not others.size:
            mixes.append(p.mixture.samples)
            continue
        q = pairs[int(rng.choice(others))]
        src = (q.target if rng.random() < 0.5 else q.interferer).samples
        power = np.mean(src ** 2)
        gain = np.sqrt(np.mean(p.interferer.samples ** 2) / power) if power > 0 else 0.0
        mixes.append(p.target.samples + gain * src)
    batch = [pairs[i] for i in idx]
    _, tgt, eeg = to_tensors(batch, dtype)
    mix = torch.as_tensor(np.stack(mixes)[:, None, :], dtype=dtype)
    return mix, tgt, eeg


class Trainer:
    """Owns model, optimizer and schedule; ``step`` performs one optimization update."""

    def __init__(self, config: TrainConfig, total_steps: int, model=None, optimizer=None,
                 log_path=None):
        self.config = config
        self.dtype = DTYPES[config.dtype]
        self.model = model if model is not None else build_model(config)
        self.optimizer = optimizer if optimizer is not None else make_optimizer(self.model, config)
        self.total_steps = max(1, total_steps)
        self.global_step = 0
        self.epoch = 0
        self.log_path = Path(log_path) if log_path else None
        self.tag = WO_ALIGNMENT_TAG if config.lam == 0 else "full"
        self.history: List[dict] = []

    def _log(self, record):
        record = {"tag": self.tag, **record}
        self.history.append(record)
        if self.log_path is not None:
            with self.log_path.open("a") as f:
                f.write(json.dumps(record) + "\n")

    def step(self, mixture, target, eeg) -> dict:
        self.model.train()
        lr = lr_schedule(min(self.global_step, self.total_steps), self.total_steps,
                         self.config.peak_lr, self.config.warmup_ratio)
        for group in self.optimizer.param_groups:
            group["lr"] = lr
        try:
            estimate, pairs = self.model(mixture, eeg)
        except FloatingPointError as exc:
            raise TrainingDiverged(f"non-finite activations at step {self.global_step}: {exc}") from exc
        report = combine(si_sdr_loss(target, estimate),
                         infonce_loss(pairs, self.config.model.tau), self.config.lam)
        if not torch.isfinite(report.total):
            raise TrainingDiverged(f"non-finite loss at step {self.global_step}")
        self.optimizer.zero_grad(set_to_none=True)
        report.total.backward()
        grad_norm = torch.nn.utils.clip_grad_norm_(self.model.parameters(), self.config.grad_clip)
        self.optimizer.step()
        self.global_step += 1
        rec = {"tag": self.tag, "event": "step", "step": self.global_step, "epoch": self.epoch, "lr": lr,
               **report.as_floats(), "grad_norm": float(grad_norm)}
        self._log(rec)
        return rec

    @torch.no_grad()
    def validate(self, pairs: Sequence[SegmentPair]) -> float:
        self.model.eval()
        scores = []
        bs = self.config.batch_size
        for i in range(0, len(pairs), bs):
            mix, tgt, eeg = to_tensors(pairs[i:i + bs], self.dtype)
            est, _ = self.model(mix, eeg)
            scores.append(si_sdr_torch(tgt, est).reshape(-1))
        return float(torch.cat(scores).mean()) if scores else float("nan")

    def save(self, path, extra=None):
        extra = {"total_steps": self.total_steps, **(extra or {})}
        return save_checkpoint(path, self.model, self.optimizer, self.config, self.epoch,
                               self.global_step, extra)

    @classmethod
    def resume(cls, path, log_path=None) -> "Trainer":
        """Rebuild a trainer (weights, optimizer moments, RNG, step counter) from a checkpoint."""
        model, optimizer, config, state = load_checkpoint(path)
        trainer = cls(config, state["total_steps"], model, optimizer, log_path)
        trainer.global_step = state["step"]
        trainer.epoch = state["epoch"]
        return trainer


def _batches(n: int, batch_size: int, rng) -> List[np.ndarray]:
    order = rng.permutation(n)
    # drop the last incomplete batch: InfoNCE needs a fixed number of in-batch negatives
    return [order[i:i + batch_size] for i in range(0, n - batch_size + 1, batch_size)]


def train(config: TrainConfig, out_dir, train_pairs: Optional[Sequence[SegmentPair]] = None,
          valid_pairs: Optional[Sequence[SegmentPair]] = None) -> dict:
    """Train a model and keep the best-validation checkpoint under ``out_dir/best``.

    Returns a summary with the checkpoint paths and the per-step history.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if train_pairs is None:
        if not config.train_manifest:
            raise ValueError("no training data: pass pairs or set train_manifest")
        train_pairs = read_manifest(config.train_manifest, split="train")
    if valid_pairs is None and config.valid_manifest:
        valid_pairs = read_manifest(config.valid_manifest, split="valid")
    valid_pairs = valid_pairs or []
    check_pairs(train_pairs, config.model, "train")
    check_pairs(valid_pairs, config.model, "valid")
    if len(train_pairs) < config.batch_size:
        raise ValueError(f"{len(train_pairs)} training segments < batch size {config.batch_size}")

    per_epoch = len(train_pairs) // config.batch_size
    log_path = out_dir / "train_log.jsonl"
    log_path.write_text("")
    trainer = Trainer(config, per_epoch * config.epochs, log_path=log_path)
    rng = np.random.default_rng(config.seed)
    last_good = trainer.save(out_dir / "last")
    best_score = -math.inf
    best_path = None
    for epoch in range(config.epochs):
        trainer.epoch = epoch
        for idx in _batches(len(train_pairs), config.batch_size, rng):
            if config.dynamic_mixing:
                mix, tgt, eeg = remix_batch(train_pairs, idx, rng, trainer.dtype)
            else:
                mix, tgt, eeg = to_tensors([train_pairs[i] for i in idx], trainer.dtype)
            try:
                trainer.step(mix, tgt, eeg)
            except TrainingDiverged as exc:
                raise TrainingDiverged(f"{exc}; last good checkpoint: {last_good}") from exc
        score = trainer.validate(valid_pairs) if valid_pairs else \
            -trainer.history[-1]["si_sdr_term"]
        trainer._log({"event": "epoch", "epoch": epoch, "valid_si_sdr": score})
        last_good = trainer.save(out_dir / "last")
        if score > best_score:
            best_score = score
            best_path = trainer.save(out_dir / "best", {"valid_si_sdr": score})
        log.info("epoch %d valid SI-SDR %.2f dB", epoch, score)
    return {"best": str(best_path), "last": str(last_good), "best_valid_si_sdr": best_score,
            "history": trainer.history, "tag": trainer.tag}


# ---------------------------------------------------------------- ablations and memory


def activation_bytes(model, mixture, eeg) -> int:
    """Bytes of tensors saved for backward during one forward pass (a memory proxy)."""
    total = 0

    def pack(t):
        nonlocal total
        total += t.numel() * t.element_size()
        return t

    with torch.autograd.graph.saved_tensors_hooks(pack, lambda t: t):
        est, pairs = model(mixture, eeg)
        (est.sum() + pairs.queries.sum()).backward()
    model.zero_grad(set_to_none=True)
    return total


VARIANTS = {
    "full": {},
    "wo-gm": {"model": {"gm_layers": 0, "scale_fusion": "sum"}},
    "wo-align": {"lam": 0.0},
}


def variant_config(base: TrainConfig, axis: str, value) -> TrainConfig:
    if axis == "gm-layers":
        model = base.model.replace(gm_layers=int(value))
        return dataclasses.replace(base, model=model)
    if axis == "variant":
        if value not in VARIANTS:
            raise ValueError(f"unknown variant {value!r}; choose from {sorted(VARIANTS)}")
        spec = VARIANTS[value]
        model = base.model.replace(**spec.get("model", {}))
        return dataclasses.replace(base, model=model, lam=spec.get("lam", base.lam))
    raise ValueError(f"unknown ablation axis {axis!r}")


def parse_values(text: str) -> list:
    """'1..5' -> [1, 2, 3, 4, 5]; 'a,b' -> ['a', 'b']."""
    if ".." in text:
        lo, hi = text.split("..")
        return list(range(int(lo), int(hi) + 1))
    return [v.strip() for v in text.split(",") if v.strip()]


def ablate(base: TrainConfig, axis: str, values, out_dir, train_pairs, test_pairs,
           valid_pairs=None) -> List[dict]:
    """Train and evaluate one model per grid value; returns one result row per value."""
    from .evaluate import evaluate_pairs, summarize

    out_dir = Path(out_dir)
    rows = []
    for value in values:
        cfg = variant_config(base, axis, value)
        run_dir = out_dir / f"{axis}={value}"
        result = train(cfg, run_dir, train_pairs, valid_pairs)
        model, _, _, _ = load_checkpoint(result["best"], restore_rng=False)
        probe = to_tensors(train_pairs[: cfg.batch_size], DTYPES[cfg.dtype])
        mem = activation_bytes(model, probe[0], probe[2])
        summary = summarize(evaluate_pairs(model, test_pairs))
        row = {"axis": axis, "value": value, "tag": result["tag"],
               "n_params": sum(p.numel() for p in model.parameters()),
               "activation_bytes": mem, **summary}
        rows.append(row)
        with (out_dir / "ablation.jsonl").open("a") as f:
            f.write(json.dumps(row) + "\n")
    return rows
