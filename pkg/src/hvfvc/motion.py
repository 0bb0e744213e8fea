"""Motion prediction, motion coding and bilinear feature alignment."""

from __future__ import annotations

import torch
import torch.nn.functional as F
from torch import nn

from .backbone import Analysis, GaussianEntropyModel, Synthesis, conv


def align(reference: torch.Tensor, motion: torch.Tensor) -> torch.Tensor:
    """Backward-warp ``reference`` (B, C, H, W) by ``motion`` (B, 2, H, W).

    ``motion[:, 0]`` is the horizontal and ``motion[:, 1]`` the vertical
    displacement in feature pixels: ``out[y, x] = ref[y + dy, x + dx]``.
    Sample positions are clamped to the border.  Zero motion returns the
    reference bit-exactly.
    """
    if reference.shape[0] != motion.shape[0] or reference.shape[-2:] != motion.shape[-2:]:
        raise ValueError(f"size mismatch: reference {tuple(reference.shape)} vs motion {tuple(motion.shape)}")
    b, c, h, w = reference.shape
    ys = torch.arange(h, dtype=reference.dtype, device=reference.device).view(1, h, 1)
    xs = torch.arange(w, dtype=reference.dtype, device=reference.device).view(1, 1, w)
    sx = (xs + motion[:, 0]).clamp(0, w - 1)
    sy = (ys + motion[:, 1]).clamp(0, h - 1)
    x0 = torch.floor(sx).detach()
    y0 = torch.floor(sy).detach()
    wx = (sx - x0).unsqueeze(1)
    wy = (sy - y0).unsqueeze(1)
    x0 = x0.long()
    y0 = y0.long()
    x1 = (x0 + 1).clamp(max=w - 1)
    y1 = (y0 + 1).clamp(max=h - 1)

    flat = reference.reshape(b, c, h * w)

    def gather(yi, xi):
        idx = (yi * w + xi).reshape(b, 1, h * w).expand(b, c, h * w)
        return flat.gather(2, idx).reshape(b, c, h, w)

    top = gather(y0, x0) * (1 - wx) + gather(y0, x1) * wx
    bottom = gather(y1, x0) * (1 - wx) + gather(y1, x1) * wx
    return top * (1 - wy) + bottom * wy


class MotionPredictor(nn.Module):
    """Pixel-to-feature motion: current frame (pooled to feature stride) + reference feature -> flow.

    The output head is zero-initialised so an untrained predictor yields a
    zero field.
    """

    def __init__(self, feature_channels, hidden=64, stride=4):
        super().__init__()
        self.stride = stride
        self.body = nn.Sequential(
            conv(3 + feature_channels, hidden), nn.LeakyReLU(0.1),
            conv(hidden, hidden), nn.LeakyReLU(0.1),
        )
        self.head = conv(hidden, 2)
        nn.init.zeros_(self.head.weight)
        nn.init.zeros_(self.head.bias)

    def forward(self, current, reference_feature):
        pooled = F.avg_pool2d(current, self.stride)
        if pooled.shape[-2:] != reference_feature.shape[-2:]:
            raise ValueError(
                f"resolution mismatch: frame/{self.stride} is {tuple(pooled.shape[-2:])}, "
                f"reference feature is {tuple(reference_feature.shape[-2:])}"
            )
        return self.head(self.body(torch.cat([pooled, reference_feature], dim=1)))


class MotionCoder(nn.Module):
    """analysis -> quantize -> hyperprior rate -> synthesis for a 2-channel flow field."""

    def __init__(self, hidden=64, latent=32, hyper=16):
        super().__init__()
        self.g_a = Analysis(2, hidden, latent)
        self.g_s = Synthesis(latent, hidden, 2)
        self.entropy = GaussianEntropyModel(latent, hyper)

    def forward(self, motion, mode="train", noise=None):
        """Return ``(reconstructed_motion, bits, (y_hat, z_hat))``."""
        y = self.g_a(motion)
        y_hat, z_hat, bits_y, bits_z = self.entropy(y, mode=mode, noise=noise)
        return self.g_s(y_hat), bits_y.sum() + bits_z.sum(), (y_hat, z_hat)


def predict_motion(current, reference_feature, predictor: MotionPredictor):
    return predictor(current, reference_feature)


def code_motion(motion, coder: MotionCoder, mode="eval", noise=None):
    recon, bits, _ = coder(motion, mode=mode, noise=noise)
    return recon, bits
