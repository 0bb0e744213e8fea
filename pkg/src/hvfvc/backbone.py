"""Differentiable transforms, quantization and the Gaussian entropy models."""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import nn

SCALE_LOWER_BOUND = 0.11
LIKELIHOOD_FLOOR = 1e-9


@dataclass(frozen=True)
class ModelConfig:
    """Architecture hyper-parameters shared by every network of the codec."""

    feature_channels: int = 64
    latent_channels: int = 96
    hyper_channels: int = 32
    motion_channels: int = 64
    motion_latent_channels: int = 32
    context_channels: int = 32
    lsh_bucket_size: int = 64
    lsh_rounds: int = 4
    lsh_seed: int = 0
    use_cfr: bool = True
    disc_channels: int = 32

    feature_stride = 4
    latent_stride = 16


# ------------------------------------------------------------ quantization


def round_half_away(x: torch.Tensor) -> torch.Tensor:
    return torch.sign(x) * torch.floor(torch.abs(x) + 0.5)


def quantize(y: torch.Tensor, mode: str = "eval", noise: torch.Tensor | None = None) -> torch.Tensor:
    """Uniform-noise surrogate in ``train`` mode, rounding (ties away from zero) in ``eval``."""
    if mode == "train":
        if noise is None:
            noise = torch.empty_like(y).uniform_(-0.5, 0.5)
        return y + noise
    if mode == "eval":
        return round_half_away(y)
    raise ValueError(f"unknown quantization mode {mode!r}")


# -------------------------------------------------------------- rate model


def _std_cdf(x: torch.Tensor) -> torch.Tensor:
    return 0.5 * torch.erfc(-x / math.sqrt(2.0))


def gaussian_likelihood(y_hat: torch.Tensor, means: torch.Tensor, scales: torch.Tensor) -> torch.Tensor:
    """Probability mass of ``[y_hat - 0.5, y_hat + 0.5]`` under N(means, scales)."""
    scales = scales.clamp_min(SCALE_LOWER_BOUND)
    v = torch.abs(y_hat - means)
    # evaluate on the left tail for numerical accuracy
    upper = _std_cdf((0.5 - v) / scales)
    lower = _std_cdf((-0.5 - v) / scales)
    return (upper - lower).clamp_min(LIKELIHOOD_FLOOR)


def gaussian_bits(y_hat: torch.Tensor, means: torch.Tensor, scales: torch.Tensor) -> torch.Tensor:
    """Per-element code length in bits."""
    return -torch.log2(gaussian_likelihood(y_hat, means, scales))


def conv(cin, cout, k=3, stride=1):
    return nn.Conv2d(cin, cout, k, stride=stride, padding=k // 2)


def deconv(cin, cout, k=3, stride=2):
    # k=3, stride 2: uneven kernel overlap, the classic checkerboard source
    return nn.ConvTranspose2d(cin, cout, k, stride=stride, padding=k // 2, output_padding=stride - 1)


class ResBlock(nn.Module):
    def __init__(self, ch):
        super().__init__()
        self.conv1 = conv(ch, ch)
        self.conv2 = conv(ch, ch)
        self.act = nn.LeakyReLU(0.1)

    def forward(self, x):
        return x + self.conv2(self.act(self.conv1(x)))


class GaussianEntropyModel(nn.Module):
    """Hyperprior Gaussian entropy model.

    ``kind="hyperprior"`` predicts per-element mean and scale from the
    hyper-latent alone.  ``kind="conditional"`` additionally concatenates a
    context map (reference features downsampled to latent resolution) into
    the hyper-decoder input.  The hyper-latent itself uses a learned
    per-channel zero-mean Gaussian.
    """

    def __init__(self, latent_channels, hyper_channels, kind="hyperprior",
                 context_in=0, context_channels=0, context_stride=4):
        super().__init__()
        if kind not in ("hyperprior", "conditional"):
            raise ValueError(f"unknown entropy model kind {kind!r}")
        self.kind = kind
        self.h_a = nn.Sequential(
            conv(latent_channels, hyper_channels), nn.LeakyReLU(0.1),
            conv(hyper_channels, hyper_channels),
        )
        ctx = context_channels if kind == "conditional" else 0
        if kind == "conditional":
            layers = []
            cin = context_in
            for _ in range(int(round(math.log2(context_stride)))):
                layers += [conv(cin, context_channels, stride=2), nn.LeakyReLU(0.1)]
                cin = context_channels
            layers.append(conv(cin, context_channels))
            self.context = nn.Sequential(*layers)
        self.h_s = nn.Sequential(
            conv(hyper_channels + ctx, latent_channels), nn.LeakyReLU(0.1),
            conv(latent_channels, 2 * latent_channels),
        )
        self.hyper_log_scale = nn.Parameter(torch.zeros(1, hyper_channels, 1, 1))

    def hyper_scales(self) -> torch.Tensor:
        return torch.exp(self.hyper_log_scale).clamp_min(SCALE_LOWER_BOUND)

    def params(self, z_hat: torch.Tensor, condition: torch.Tensor | None = None):
        """Return ``(means, scales)`` for the latent given the decoded hyper-latent."""
        inp = z_hat
        if self.kind == "conditional":
            if condition is None:
                raise ValueError("conditional entropy model requires a condition")
            inp = torch.cat([z_hat, self.context(condition)], dim=1)
        means, raw = self.h_s(inp).chunk(2, dim=1)
        scales = F.softplus(raw).clamp_min(SCALE_LOWER_BOUND)
        return means, scales

    def forward(self, y, condition=None, mode="train", noise=None):
        """Quantize ``y`` and its hyper-latent; return ``(y_hat, z_hat, bits_y, bits_z)``.

        ``noise`` is an optional pair of fixed noise tensors for train mode.
        """
        if self.kind == "conditional" and condition is None:
            raise ValueError("conditional entropy model requires a condition")
        ny, nz = noise if noise is not None else (None, None)
        z = self.h_a(y)
        z_hat = quantize(z, mode, nz)
        y_hat = quantize(y, mode, ny)
        bits_y, bits_z = self.estimate_rate(y_hat, z_hat, condition)
        return y_hat, z_hat, bits_y, bits_z

    def estimate_rate(self, y_hat, z_hat, condition=None):
        """Per-element bit maps for latent and hyper-latent."""
        means, scales = self.params(z_hat, condition)
        bits_y = gaussian_bits(y_hat, means, scales)
        bits_z = gaussian_bits(z_hat, torch.zeros_like(z_hat), self.hyper_scales().expand_as(z_hat))
        return bits_y, bits_z


# ------------------------------------------------------------- transforms


class FeatureExtractor(nn.Module):
    """Frame -> stride-4 feature map."""

    def __init__(self, channels=64):
        super().__init__()
        self.net = nn.Sequential(
            conv(3, channels, 5, stride=2), nn.LeakyReLU(0.1), ResBlock(channels),
            conv(channels, channels, 3, stride=2), ResBlock(channels),
        )

    def forward(self, frame):
        if frame.shape[-1] % 4 or frame.shape[-2] % 4:
            raise ValueError(f"frame size {tuple(frame.shape[-2:])} not divisible by stride 4")
        return self.net(frame)


class FrameGenerator(nn.Module):
    """Stride-4 features -> frame in [0, 1] via two transposed convolutions."""

    def __init__(self, channels=64):
        super().__init__()
        self.channels = channels
        self.net = nn.Sequential(
            ResBlock(channels), deconv(channels, channels), nn.LeakyReLU(0.1),
            ResBlock(channels), deconv(channels, 3),
        )

    def forward(self, feature):
        if feature.shape[1] != self.channels:
            raise ValueError(f"expected {self.channels} feature channels, got {feature.shape[1]}")
        return torch.sigmoid(self.net(feature))


class Analysis(nn.Module):
    """Two stride-2 stages (stride 4)."""

    def __init__(self, cin, cmid, cout):
        super().__init__()
        self.net = nn.Sequential(conv(cin, cmid, stride=2), nn.LeakyReLU(0.1), conv(cmid, cout, stride=2))

    def forward(self, x):
        return self.net(x)


class Synthesis(nn.Module):
    def __init__(self, cin, cmid, cout):
        super().__init__()
        self.net = nn.Sequential(deconv(cin, cmid), nn.LeakyReLU(0.1), deconv(cmid, cout))

    def forward(self, x):
        return self.net(x)


def feature_extract(frame: torch.Tensor, extractor: FeatureExtractor) -> torch.Tensor:
    return extractor(frame)


def frame_generate(feature: torch.Tensor, generator: FrameGenerator) -> torch.Tensor:
    return generator(feature)


class PatchDiscriminator(nn.Module):
    """Four strided conv layers; outputs one raw score per patch."""

    def __init__(self, channels=32):
        super().__init__()
        c = channels
        self.net = nn.Sequential(
            nn.Conv2d(3, c, 4, 2, 1), nn.LeakyReLU(0.2),
            nn.Conv2d(c, 2 * c, 4, 2, 1), nn.LeakyReLU(0.2),
            nn.Conv2d(2 * c, 4 * c, 4, 2, 1), nn.LeakyReLU(0.2),
            nn.Conv2d(4 * c, 1, 3, 1, 1),
        )

    def forward(self, x):
        return self.net(x).flatten(1)
