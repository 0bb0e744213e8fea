"""Encode and decode whole sequences to and from ``.hvb`` containers.

The encoder reconstructs every frame through the same decode-side routines
the decoder runs, from the same integer symbols, so both sides hold
identical references.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .backbone import round_half_away
from .bitstream import BitstreamContainer
from .data_media import VideoSequence
from .entropy_coding import CorruptStreamError, PMFTable, RansDecoder, RansEncoder
from .model import VideoCodec
from .motion import align
from .schedule import schedule_frame_types


def no_entropy_skip(kind: str, means: torch.Tensor, scales: torch.Tensor):
    """Placeholder for probability-based entropy skipping; never skips anything."""
    return None


@dataclass
class EncodeResult:
    container: BitstreamContainer
    reconstructions: list[torch.Tensor]  # padded (1, 3, H, W) per frame
    estimated_bits: float
    frame_bits: list[int]

    @property
    def actual_bits(self) -> int:
        return 8 * self.container.payload_bytes()


def _to_tensor(frame: np.ndarray) -> torch.Tensor:
    return torch.from_numpy(np.ascontiguousarray(frame)).permute(2, 0, 1).unsqueeze(0).float()


def _hyper_table(entropy, z_shape) -> PMFTable:
    scales = entropy.hyper_scales().expand(z_shape)
    return PMFTable.gaussian(np.zeros(int(np.prod(z_shape))), scales.detach().numpy())


def _latent_table(entropy, z_hat, condition=None) -> PMFTable:
    means, scales = entropy.params(z_hat, condition)
    return PMFTable.gaussian(means.detach().numpy(), scales.detach().numpy())


def _code_latent(enc_z: RansEncoder, enc_y: RansEncoder, entropy, y, condition=None, kind="", skip_hook=None):
    """Quantize ``y`` and its hyper-latent and push both into the given encoders.

    Returns ``(y_hat, estimated_bits)``.
    """
    z_hat = round_half_away(entropy.h_a(y))
    y_hat = round_half_away(y)
    zt = _hyper_table(entropy, z_hat.shape)
    zs = z_hat.numpy().astype(np.int64).ravel()
    enc_z.encode(zs, zt)
    means, scales = entropy.params(z_hat, condition)
    if skip_hook is not None and skip_hook(kind, means, scales) is not None:
        raise NotImplementedError("entropy skipping is not supported")
    yt = PMFTable.gaussian(means.numpy(), scales.numpy())
    ys = y_hat.numpy().astype(np.int64).ravel()
    enc_y.encode(ys, yt)
    return y_hat, zt.ideal_bits(zs) + yt.ideal_bits(ys)


def _read_stream(dec: RansDecoder, entropy, y_shape, z_shape, condition=None) -> torch.Tensor:
    zs = dec.decode(_hyper_table(entropy, z_shape))
    z_hat = torch.from_numpy(zs.astype(np.float32)).reshape(z_shape)
    ys = dec.decode(_latent_table(entropy, z_hat, condition))
    return torch.from_numpy(ys.astype(np.float32)).reshape(y_shape)


def _shapes(model: VideoCodec, height: int, width: int) -> dict:
    cfg = model.config
    h, w = height // 16, width // 16
    return {
        "intra_y": (1, cfg.latent_channels, h, w),
        "intra_z": (1, cfg.hyper_channels, h, w),
        "motion_y": (1, cfg.motion_latent_channels, h, w),
        "motion_z": (1, max(cfg.hyper_channels // 2, 1), h, w),
        "res_y": (1, cfg.latent_channels, h, w),
        "res_z": (1, cfg.hyper_channels, h, w),
    }


# ----------------------------------------------------------- decode side


def _reconstruct_intra(model, y_hat):
    return model.intra_decode(y_hat)[1]


def _reconstruct_p(model, ref_feature, ym_hat, w_hat):
    motion_hat = model.motion_coder.g_s(ym_hat)
    predicted = align(ref_feature, motion_hat)
    residual, conf = model.residual_coder.decode(w_hat)
    feature = model.reconstruct_p_feature(predicted, residual, conf)
    return model.generator(feature), predicted, (conf if model.config.use_cfr else None)


def _check_model(model: VideoCodec):
    if not isinstance(model, VideoCodec):
        raise TypeError("model must be a VideoCodec")


def encode_sequence(seq: VideoSequence, model: VideoCodec, gop: int, skip_hook=no_entropy_skip) -> EncodeResult:
    """Encode ``seq`` with I / cI / P frames per the GoP schedule."""
    _check_model(model)
    model.eval()
    kinds = schedule_frame_types(len(seq), gop)
    h, w = seq.original_size
    container = BitstreamContainer(width=w, height=h, gop=gop, model_tag=model.fingerprint())
    recons = []
    estimate = 0.0
    frame_bits = []
    ref = None
    with torch.no_grad():
        for t, kind in enumerate(kinds):
            x = _to_tensor(seq.frames[t])
            if kind in ("I", "cI"):
                entropy = model.intra_entropy if kind == "I" else model.cintra_entropy
                cond = model.extractor(ref) if kind == "cI" else None
                enc_z, enc_y = RansEncoder(), RansEncoder()
                y = model.intra_g_a(model.extractor(x))
                y_hat, bits = _code_latent(enc_z, enc_y, entropy, y, cond, kind, skip_hook)
                payloads = [enc_z.finish(), enc_y.finish()]
                recon = _reconstruct_intra(model, y_hat)
            else:
                ref_feature = model.extractor(ref)
                motion = model.motion_predictor(x, ref_feature)
                enc_m = RansEncoder()
                ym_hat, bits_m = _code_latent(enc_m, enc_m, model.motion_coder.entropy,
                                              model.motion_coder.g_a(motion), None, "motion", skip_hook)
                predicted = align(ref_feature, model.motion_coder.g_s(ym_hat))
                feature = model.extractor(x)
                w_lat = model.residual_coder.g_a(torch.cat([feature, predicted], dim=1))
                enc_r = RansEncoder()
                w_hat, bits_r = _code_latent(enc_r, enc_r, model.residual_coder.entropy, w_lat, None, "P", skip_hook)
                payloads = [enc_m.finish(), enc_r.finish()]
                bits = bits_m + bits_r
                recon = _reconstruct_p(model, ref_feature, ym_hat, w_hat)[0]
            container.frame_types.append(kind)
            container.payloads.append(payloads)
            estimate += bits
            frame_bits.append(8 * sum(len(p) for p in payloads))
            recons.append(recon)
            ref = recon
    return EncodeResult(container, recons, estimate, frame_bits)


def decode_frames(container: BitstreamContainer, model: VideoCodec, return_confidence: bool = False):
    """Decode to padded reconstructions (list of (1, 3, H, W) tensors)."""
    _check_model(model)
    if container.model_tag != model.fingerprint():
        raise ValueError("container was produced by a different model architecture")
    model.eval()
    ph = -(-container.height // 16) * 16
    pw = -(-container.width // 16) * 16
    shapes = _shapes(model, ph, pw)
    recons, confs = [], []
    ref = None
    with torch.no_grad():
        for t, (kind, payloads) in enumerate(zip(container.frame_types, container.payloads)):
            if len(payloads) != 2:
                raise CorruptStreamError(f"frame {t}: expected 2 payloads, found {len(payloads)}")
            if kind != "I" and ref is None:
                raise CorruptStreamError(f"frame {t}: {kind} frame without a reference")
            conf = None
            if kind in ("I", "cI"):
                entropy = model.intra_entropy if kind == "I" else model.cintra_entropy
                cond = model.extractor(ref) if kind == "cI" else None
                dz = RansDecoder(payloads[0])
                z_hat = torch.from_numpy(dz.decode(_hyper_table(entropy, shapes["intra_z"])).astype(np.float32))
                dz.finish()
                z_hat = z_hat.reshape(shapes["intra_z"])
                dy = RansDecoder(payloads[1])
                ys = dy.decode(_latent_table(entropy, z_hat, cond))
                dy.finish()
                y_hat = torch.from_numpy(ys.astype(np.float32)).reshape(shapes["intra_y"])
                recon = _reconstruct_intra(model, y_hat)
            else:
                ref_feature = model.extractor(ref)
                dm = RansDecoder(payloads[0])
                ym_hat = _read_stream(dm, model.motion_coder.entropy, shapes["motion_y"], shapes["motion_z"])
                dm.finish()
                dr = RansDecoder(payloads[1])
                w_hat = _read_stream(dr, model.residual_coder.entropy, shapes["res_y"], shapes["res_z"])
                dr.finish()
                recon, _, conf = _reconstruct_p(model, ref_feature, ym_hat, w_hat)
            recons.append(recon)
            confs.append(conf)
            ref = recon
    return (recons, confs) if return_confidence else recons


def decode_sequence(container: BitstreamContainer, model: VideoCodec, frame_rate: float = 30.0) -> VideoSequence:
    """Decode and crop to the original frame size."""
    recons = decode_frames(container, model)
    frames = np.stack([r[0].permute(1, 2, 0).numpy() for r in recons])
    frames = np.clip(frames[:, : container.height, : container.width], 0.0, 1.0)
    return VideoSequence(frames, frame_rate=frame_rate)


def tensor_to_frame(t: torch.Tensor) -> np.ndarray:
    return t[0].permute(1, 2, 0).detach().numpy()
