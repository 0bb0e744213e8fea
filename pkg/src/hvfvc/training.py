"""Two-stage training with lambda rate control.

Stage 1 minimises ``lambda * R + MSE``.  Stage 2 starts from a stage-1
checkpoint and minimises the full rate-distortion-perception objective,
alternating one discriminator and one generator update per step.
"""

from __future__ import annotations

import ast
import json
import logging
import math
import os
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np
import torch

from .backbone import ModelConfig
from .data_media import VideoSequence, load_sequence
from .losses import LossReport, LossWeights, RandomConvBackbone, ragan_losses, total_loss
from .model import VideoCodec, build_discriminator, load_checkpoint, save_checkpoint
from .schedule import RateControlState, rate_control_step, schedule_frame_types

log = logging.getLogger(__name__)


class TrainingDivergedError(FloatingPointError):
    pass


@dataclass
class TrainConfig:
    stage: int = 1
    epochs: int = 1
    steps_per_epoch: int = 1000
    lr: float = 1e-4
    lr_decay_epoch: int | None = None  # epoch at which lr drops to lr_after
    lr_after: float = 5e-5
    batch_size: int = 8
    crop_size: int = 256
    unroll: int = 3
    train_gop: int = 3
    seed: int = 0
    lam: float = 0.01
    alpha: float = 1e-2
    beta: float = 1.0
    gamma: float = 5e-4
    phi: float = 0.1
    pc_period: int = 4
    target_bpp: float | None = None
    check_interval: int = 1000
    data: list = field(default_factory=list)
    validation: str | None = None
    validation_gop: int = 50
    init_checkpoint: str | None = None
    out_dir: str | None = None
    resume: bool = False
    model: dict = field(default_factory=dict)

    @classmethod
    def stage2_defaults(cls, **kw) -> "TrainConfig":
        kw.setdefault("stage", 2)
        kw.setdefault("lr", 1e-5)
        kw.setdefault("lr_after", 1e-5)
        return cls(**kw)

    def weights(self) -> LossWeights:
        if self.stage == 1:
            return LossWeights.stage1(self.lam)
        return LossWeights(lam=self.lam, alpha=self.alpha, beta=self.beta, gamma=self.gamma, phi=self.phi)

    def model_config(self) -> ModelConfig:
        return ModelConfig(**self.model)

    def lr_at(self, epoch: int) -> float:
        if self.lr_decay_epoch is not None and epoch >= self.lr_decay_epoch:
            return self.lr_after
        return self.lr


def _parse_value(text: str):
    text = text.strip()
    low = text.lower()
    if low in ("true", "false"):
        return low == "true"
    if low in ("none", "null"):
        return None
    try:
        return ast.literal_eval(text)
    except (ValueError, SyntaxError):
        return text


def parse_config_text(text: str) -> dict:
    """Flat ``key = value`` lines; ``#`` comments; ``model.x`` keys go to the model dict."""
    out: dict = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"config line {lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        value = _parse_value(value)
        if key.startswith("model."):
            out.setdefault("model", {})[key[len("model."):]] = value
        else:
            out[key] = value
    return out


def load_config(path=None, overrides: dict | None = None) -> TrainConfig:
    """Config file, then the ``HVFVC_SEED`` environment variable, then CLI overrides."""
    values: dict = {}
    if path is not None:
        values.update(parse_config_text(Path(path).read_text()))
    if "HVFVC_SEED" in os.environ:
        values["seed"] = int(os.environ["HVFVC_SEED"])
    for k, v in (overrides or {}).items():
        if v is None:
            continue
        if k == "model":
            values.setdefault("model", {}).update(v)
        else:
            values[k] = v
    known = {f.name for f in fields(TrainConfig)}
    unknown = set(values) - known
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")
    if isinstance(values.get("data"), str):
        values["data"] = [values["data"]]
    return TrainConfig(**values)


# ------------------------------------------------------------------- data


class ClipSampler:
    """Random clips with random crops; item ``(step, i)`` depends only on the seed."""

    def __init__(self, sequences: list[VideoSequence], unroll: int, crop: int, seed: int):
        if not sequences:
            raise ValueError("no training sequences")
        self.sequences = [s for s in sequences if len(s) >= unroll]
        if not self.sequences:
            raise ValueError(f"no training sequence has {unroll} frames")
        self.unroll = unroll
        self.crop = crop
        self.seed = seed

    def item(self, step: int, index: int) -> np.ndarray:
        rng = np.random.default_rng([self.seed, step, index])
        seq = self.sequences[rng.integers(len(self.sequences))]
        t0 = rng.integers(len(seq) - self.unroll + 1)
        h, w = seq.height, seq.width
        ch, cw = min(self.crop, h), min(self.crop, w)
        ch -= ch % 16
        cw -= cw % 16
        y0 = rng.integers(h - ch + 1)
        x0 = rng.integers(w - cw + 1)
        return seq.frames[t0 : t0 + self.unroll, y0 : y0 + ch, x0 : x0 + cw]

    def batch(self, step: int, size: int) -> torch.Tensor:
        arr = np.stack([self.item(step, i) for i in range(size)])
        return torch.from_numpy(arr).permute(0, 1, 4, 2, 3).contiguous()


def sequence_tensor(seq: VideoSequence) -> torch.Tensor:
    return torch.from_numpy(seq.frames).permute(0, 3, 1, 2).unsqueeze(0).contiguous()


def estimate_sequence(model: VideoCodec, seq: VideoSequence, gop: int):
    """Eval-path forward pass: returns ``(bpp, reconstructions, results)`` using estimated rates."""
    was_training = model.training
    model.eval()
    frames = sequence_tensor(seq)
    kinds = schedule_frame_types(len(seq), gop)
    with torch.no_grad():
        results = model.forward_sequence(frames, kinds, mode="eval")
    model.train(was_training)
    pixels = len(seq) * seq.height * seq.width
    bpp = float(sum(r.bits.sum() for r in results)) / pixels
    return bpp, [r.recon for r in results], results


# --------------------------------------------------------------- training


def _clip_loss(model, clip, kinds, weights, period, backbone, disc=None):
    results = model.forward_sequence(clip, kinds, mode="train")
    total = 0.0
    reports = []
    for t, res in enumerate(results):
        x = clip[:, t]
        real = fake = None
        if disc is not None and weights.gamma:
            real = disc(x)
            fake = disc(res.recon)
        loss, rep = total_loss(res.bits.sum(), x, res.recon, weights, period, backbone,
                               real_scores=real, fake_scores=fake)
        total = total + loss
        reports.append(rep)
    n = len(results)
    mean = {k: float(np.mean([getattr(r, k) for r in reports])) for k in reports[0].as_dict()}
    return total / n, LossReport(**mean), results


def _check_finite(loss, step, report):
    if not torch.isfinite(loss):
        raise TrainingDivergedError(f"non-finite loss at step {step}: {report.as_dict()}")


def run_stage(config: TrainConfig, model: VideoCodec | None = None, data=None,
              validation: VideoSequence | None = None, progress=None):
    """Train one stage.  Returns ``(model, log_rows)``.

    ``data`` may be a list of sequences; otherwise ``config.data`` paths are
    loaded.  Stage 2 needs ``config.init_checkpoint``.
    """
    torch.manual_seed(config.seed)
    disc = None
    if config.stage == 2:
        if not config.init_checkpoint or not Path(config.init_checkpoint).exists():
            raise FileNotFoundError("stage 2 requires a stage-1 checkpoint (init_checkpoint)")
        model, disc, _ = load_checkpoint(config.init_checkpoint, with_discriminator=True)
        if disc is None:
            disc = build_discriminator(model.config)
    elif config.stage != 1:
        raise ValueError(f"unknown stage {config.stage}")
    elif model is None:
        if config.init_checkpoint:
            model = load_checkpoint(config.init_checkpoint)[0]
        else:
            model = VideoCodec(config.model_config())

    if data is None:
        data = [load_sequence(p) for p in config.data]
    if validation is None and config.validation:
        validation = load_sequence(config.validation)
    sampler = ClipSampler(list(data), config.unroll, config.crop_size, config.seed)
    kinds = schedule_frame_types(config.unroll, config.train_gop)
    weights = config.weights()
    backbone = RandomConvBackbone() if weights.beta else None

    opt = torch.optim.Adam(model.parameters(), lr=config.lr_at(0))
    opt_d = torch.optim.Adam(disc.parameters(), lr=config.lr_at(0)) if disc is not None else None
    rc = None
    if config.target_bpp is not None:
        rc = RateControlState(weights.lam, config.target_bpp, config.check_interval)

    out_dir = Path(config.out_dir) if config.out_dir else None
    log_file = None
    start_step = 0
    rows: list[dict] = []
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        state_path = out_dir / "train_state.pt"
        if config.resume and state_path.exists():
            start_step, rc = _restore(state_path, model, disc, opt, opt_d, rc)
            if rc is not None:
                weights = weights.with_lambda(rc.lam)
            rows = [json.loads(line) for line in (out_dir / "train_log.jsonl").read_text().splitlines() if line]
            rows = [r for r in rows if r["step"] < start_step]
        log_file = open(out_dir / "train_log.jsonl", "w")
        for r in rows:
            log_file.write(json.dumps(r) + "\n")

    total_steps = config.epochs * config.steps_per_epoch
    model.train()
    try:
        for step in range(start_step, total_steps):
            epoch = step // config.steps_per_epoch
            for g in opt.param_groups:
                g["lr"] = config.lr_at(epoch)
            clip = sampler.batch(step, config.batch_size)

            gan_d = 0.0
            if disc is not None and weights.gamma:
                for g in opt_d.param_groups:
                    g["lr"] = config.lr_at(epoch)
                with torch.no_grad():
                    fakes = [r.recon for r in model.forward_sequence(clip, kinds, mode="train")]
                loss_d = 0.0
                for t, fake in enumerate(fakes):
                    loss_d = loss_d + ragan_losses(disc(clip[:, t]), disc(fake))[0]
                loss_d = loss_d / len(fakes)
                opt_d.zero_grad()
                loss_d.backward()
                opt_d.step()
                gan_d = float(loss_d.detach())
                for p in disc.parameters():
                    p.requires_grad_(False)

            loss, report, _ = _clip_loss(model, clip, kinds, weights, config.pc_period, backbone, disc)
            if disc is not None:
                for p in disc.parameters():
                    p.requires_grad_(True)
                report.gan_d = gan_d
            _check_finite(loss, step, report)
            opt.zero_grad()
            loss.backward()
            opt.step()

            row = {"step": step, "stage": config.stage, **report.as_dict(), "bpp": report.rate_bits_per_pixel}
            rows.append(row)
            if log_file is not None:
                log_file.write(json.dumps(row) + "\n")

            if rc is not None and validation is not None and (step + 1) % config.check_interval == 0:
                bpp, _, _ = estimate_sequence(model, validation, config.validation_gop)
                model.train()
                rc = rate_control_step(rc, bpp, step + 1)
                weights = weights.with_lambda(rc.lam)
                log.info("step %d: validation bpp %.4f -> lambda %.5g", step + 1, bpp, rc.lam)
            if progress is not None:
                progress(step, report)

            if out_dir is not None and (step + 1) % config.steps_per_epoch == 0:
                e = (step + 1) // config.steps_per_epoch
                save_checkpoint(out_dir / f"stage{config.stage}_epoch{e:03d}.npz", model, disc,
                                extra={"step": step + 1, "lam": weights.lam})
                _save_state(out_dir / "train_state.pt", step + 1, model, disc, opt, opt_d, rc)
    finally:
        if log_file is not None:
            log_file.close()
    model.eval()
    return model, rows


def _save_state(path, step, model, disc, opt, opt_d, rc):
    torch.save({
        "step": step,
        "model": model.state_dict(),
        "disc": disc.state_dict() if disc is not None else None,
        "opt": opt.state_dict(),
        "opt_d": opt_d.state_dict() if opt_d is not None else None,
        "rc": asdict(rc) if rc is not None else None,
        "torch_rng": torch.get_rng_state(),
        "lsh_rng": model.intra_aggregation._train_gen.get_state(),
    }, path)


def _restore(path, model, disc, opt, opt_d, rc):
    state = torch.load(path, weights_only=False)
    model.load_state_dict(state["model"])
    if disc is not None and state["disc"] is not None:
        disc.load_state_dict(state["disc"])
    opt.load_state_dict(state["opt"])
    if opt_d is not None and state["opt_d"] is not None:
        opt_d.load_state_dict(state["opt_d"])
    torch.set_rng_state(state["torch_rng"])
    model.intra_aggregation._train_gen.set_state(state["lsh_rng"])
    if state["rc"] is not None:
        d = state["rc"]
        rc = RateControlState(d["lam"], d["target_bpp"], d["check_interval"],
                              tuple(tuple(h) for h in d["history"]))
    return state["step"], rc
