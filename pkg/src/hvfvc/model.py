"""The full codec network and its checkpoint format."""

from __future__ import annotations

import io
import json
import zlib
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch
from torch import nn

from .backbone import (Analysis, FeatureExtractor, FrameGenerator, GaussianEntropyModel, ModelConfig,
                       PatchDiscriminator, Synthesis)
from .cfr import IntraAggregation, LSHParams, ResidualConfidenceCoder, final_reconstruct, initial_reconstruct
from .motion import MotionCoder, MotionPredictor, align

CHECKPOINT_VERSION = 1
CHECKPOINT_MAGIC = "hvfvc-checkpoint"


@dataclass
class FrameResult:
    """Outputs of coding one frame (training or evaluation)."""

    recon: torch.Tensor
    feature: torch.Tensor
    bits: torch.Tensor
    kind: str
    confidence: torch.Tensor | None = None
    motion: torch.Tensor | None = None
    bits_parts: dict = field(default_factory=dict)


class VideoCodec(nn.Module):
    """I / cI / P frame codec operating in a stride-4 feature space.

    I and cI frames share analysis/synthesis transforms and differ only in
    the entropy model (cI conditions on features of the previous
    reconstruction).  P frames code motion, align the reference features and
    code a joint residual/confidence latent.
    """

    def __init__(self, config: ModelConfig | None = None):
        super().__init__()
        cfg = config or ModelConfig()
        self.config = cfg
        c, cl, ch = cfg.feature_channels, cfg.latent_channels, cfg.hyper_channels
        self.extractor = FeatureExtractor(c)
        self.generator = FrameGenerator(c)
        self.intra_g_a = Analysis(c, c, cl)
        self.intra_g_s = Synthesis(cl, c, c)
        self.intra_entropy = GaussianEntropyModel(cl, ch)
        self.cintra_entropy = GaussianEntropyModel(cl, ch, kind="conditional", context_in=c,
                                                   context_channels=cfg.context_channels)
        self.motion_predictor = MotionPredictor(c, cfg.motion_channels)
        self.motion_coder = MotionCoder(cfg.motion_channels, cfg.motion_latent_channels, ch // 2 or 1)
        self.residual_coder = ResidualConfidenceCoder(c, cl, ch)
        lsh = LSHParams(n_rounds=cfg.lsh_rounds, bucket_size=cfg.lsh_bucket_size)
        self.intra_aggregation = IntraAggregation(c, lsh, seed=cfg.lsh_seed)

    # ------------------------------------------------------------ pieces

    def descriptor(self) -> dict:
        return {"arch": "hvfvc-videocodec", **asdict(self.config)}

    def fingerprint(self) -> int:
        return zlib.crc32(json.dumps(self.descriptor(), sort_keys=True).encode())

    def reconstruct_p_feature(self, predicted, residual, confidence):
        if not self.config.use_cfr:
            # ablation: confidence forced to 1, no intra aggregation
            return predicted + residual
        initial = initial_reconstruct(predicted, confidence, residual)
        return final_reconstruct(initial, confidence, self.intra_aggregation)

    def intra_decode(self, y_hat):
        feature = self.intra_g_s(y_hat)
        return feature, self.generator(feature)

    # ----------------------------------------------------------- forward

    def code_frame(self, x, kind, ref_recon=None, mode="train", noise=None) -> FrameResult:
        """Code one frame batch ``x`` (B, 3, H, W) as ``kind`` in ``{"I", "cI", "P"}``.

        ``noise`` optionally fixes the training quantization noise: a dict
        with keys ``"intra"``, ``"motion"``, ``"residual"`` mapping to
        ``(latent_noise, hyper_noise)`` pairs.
        """
        noise = noise or {}
        feature = self.extractor(x)
        if kind in ("I", "cI"):
            y = self.intra_g_a(feature)
            if kind == "I":
                y_hat, z_hat, by, bz = self.intra_entropy(y, mode=mode, noise=noise.get("intra"))
            else:
                if ref_recon is None:
                    raise ValueError("cI frame needs a reference reconstruction")
                cond = self.extractor(ref_recon)
                y_hat, z_hat, by, bz = self.cintra_entropy(y, cond, mode=mode, noise=noise.get("intra"))
            feat_hat, recon = self.intra_decode(y_hat)
            bits = by.flatten(1).sum(1) + bz.flatten(1).sum(1)
            return FrameResult(recon, feat_hat, bits, kind, bits_parts={"latent": by, "hyper": bz})
        if kind != "P":
            raise ValueError(f"unknown frame type {kind!r}")
        if ref_recon is None:
            raise ValueError("P frame needs a reference reconstruction")
        ref_feature = self.extractor(ref_recon)
        motion = self.motion_predictor(x, ref_feature)
        y_m = self.motion_coder.g_a(motion)
        ym_hat, zm_hat, bym, bzm = self.motion_coder.entropy(y_m, mode=mode, noise=noise.get("motion"))
        motion_hat = self.motion_coder.g_s(ym_hat)
        predicted = align(ref_feature, motion_hat)
        w = self.residual_coder.g_a(torch.cat([feature, predicted], dim=1))
        w_hat, zw_hat, bw, bzw = self.residual_coder.entropy(w, mode=mode, noise=noise.get("residual"))
        residual, conf = self.residual_coder.decode(w_hat)
        feat_hat = self.reconstruct_p_feature(predicted, residual, conf)
        recon = self.generator(feat_hat)
        parts = {"motion": bym.flatten(1).sum(1) + bzm.flatten(1).sum(1),
                 "residual": bw.flatten(1).sum(1) + bzw.flatten(1).sum(1)}
        return FrameResult(recon, feat_hat, parts["motion"] + parts["residual"], "P",
                           confidence=conf if self.config.use_cfr else None, motion=motion_hat,
                           bits_parts=parts)

    def forward_sequence(self, frames, kinds, mode="train"):
        """Code a clip ``frames`` (B, T, 3, H, W) following the frame-type list ``kinds``."""
        results = []
        ref = None
        for t, kind in enumerate(kinds):
            res = self.code_frame(frames[:, t], kind, ref_recon=ref, mode=mode)
            results.append(res)
            ref = res.recon
        return results


def build_discriminator(config: ModelConfig) -> PatchDiscriminator:
    return PatchDiscriminator(config.disc_channels)


# -------------------------------------------------------------- checkpoints


def save_checkpoint(path, model: VideoCodec, discriminator: nn.Module | None = None, extra: dict | None = None):
    """Write an ``.npz`` archive: named parameter arrays plus a JSON header."""
    arrays = {f"codec/{k}": v.detach().cpu().numpy() for k, v in model.state_dict().items()}
    if discriminator is not None:
        arrays.update({f"disc/{k}": v.detach().cpu().numpy() for k, v in discriminator.state_dict().items()})
    header = {
        "magic": CHECKPOINT_MAGIC,
        "version": CHECKPOINT_VERSION,
        "descriptor": model.descriptor(),
        "has_discriminator": discriminator is not None,
        "extra": extra or {},
    }
    arrays["__header__"] = np.frombuffer(json.dumps(header, sort_keys=True).encode(), dtype=np.uint8)
    path = Path(path)
    buf = io.BytesIO()
    np.savez(buf, **arrays)
    path.write_bytes(buf.getvalue())


def read_checkpoint_header(path) -> dict:
    with np.load(path) as data:
        return json.loads(bytes(data["__header__"]).decode())


def load_checkpoint(path, with_discriminator: bool = False):
    """Return ``(model, discriminator_or_None, header)``."""
    with np.load(path) as data:
        if "__header__" not in data:
            raise ValueError(f"{path} is not a codec checkpoint")
        header = json.loads(bytes(data["__header__"]).decode())
        if header.get("magic") != CHECKPOINT_MAGIC:
            raise ValueError(f"{path} is not a codec checkpoint")
        if header.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {header.get('version')}")
        desc = dict(header["descriptor"])
        desc.pop("arch", None)
        model = VideoCodec(ModelConfig(**desc))
        state = {k[len("codec/"):]: torch.from_numpy(data[k].copy()) for k in data.files if k.startswith("codec/")}
        model.load_state_dict(state)
        disc = None
        if with_discriminator and header.get("has_discriminator"):
            disc = build_discriminator(model.config)
            dstate = {k[len("disc/"):]: torch.from_numpy(data[k].copy()) for k in data.files if k.startswith("disc/")}
            disc.load_state_dict(dstate)
    model.eval()
    return model, disc, header
