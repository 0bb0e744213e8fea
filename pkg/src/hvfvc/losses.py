"""Training objectives: L1/MSE, perceptual distance, RaGAN, periodic compensation, total."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace

import torch
import torch.nn.functional as F
from torch import nn


@dataclass(frozen=True)
class LossWeights:
    lam: float = 0.01
    alpha: float = 1e-2
    beta: float = 1.0
    gamma: float = 5e-4
    phi: float = 0.1
    mse: float = 0.0

    def __post_init__(self):
        for k, v in asdict(self).items():
            if v < 0:
                raise ValueError(f"loss weight {k} must be non-negative, got {v}")

    @classmethod
    def stage1(cls, lam: float = 0.01) -> "LossWeights":
        return cls(lam=lam, alpha=0.0, beta=0.0, gamma=0.0, phi=0.0, mse=1.0)

    def with_lambda(self, lam: float) -> "LossWeights":
        return replace(self, lam=lam)


@dataclass
class LossReport:
    rate_bits_per_pixel: float
    l1: float
    perceptual: float
    gan_g: float
    gan_d: float
    pc: float
    mse: float
    total: float
    lam: float

    def recompose(self, w: LossWeights) -> float:
        return (w.lam * self.rate_bits_per_pixel + w.mse * self.mse + w.alpha * self.l1
                + w.beta * self.perceptual + w.gamma * self.gan_g + w.phi * self.pc)

    def as_dict(self) -> dict:
        return asdict(self)


# ------------------------------------------------------------ PC loss


def block_average(frame: torch.Tensor, period: int) -> torch.Tensor:
    """Mean over all non-overlapping ``period x period`` blocks at each offset.

    ``frame`` is ``(..., C, H, W)``; the result is ``(..., C, P, P)``.
    """
    h, w = frame.shape[-2:]
    if period <= 0 or h % period or w % period:
        raise ValueError(f"period {period} does not divide frame size {h}x{w}")
    blocks = frame.reshape(*frame.shape[:-2], h // period, period, w // period, period)
    return blocks.mean(dim=(-4, -2))


def pc_loss(x: torch.Tensor, x_hat: torch.Tensor, period: int) -> torch.Tensor:
    """Periodic compensation loss: MSE between the block averages of ``x`` and ``x_hat``."""
    if x.shape != x_hat.shape:
        raise ValueError(f"shape mismatch: {tuple(x.shape)} vs {tuple(x_hat.shape)}")
    return torch.mean((block_average(x, period) - block_average(x_hat, period)) ** 2)


# --------------------------------------------------------------- RaGAN


def ragan_losses(real_scores: torch.Tensor, fake_scores: torch.Tensor):
    """Relativistic-average discriminator and generator losses (nats).

    Scores are raw (pre-sigmoid) discriminator outputs, flattened.
    """
    real_scores = torch.as_tensor(real_scores).flatten()
    fake_scores = torch.as_tensor(fake_scores).flatten()
    if real_scores.numel() == 0 or fake_scores.numel() == 0:
        raise ValueError("score lists must be non-empty")
    real_rel = real_scores - fake_scores.mean()
    fake_rel = fake_scores - real_scores.mean()
    # log(sigma(a)) = logsigmoid(a), log(1 - sigma(a)) = logsigmoid(-a)
    loss_d = -F.logsigmoid(real_rel).mean() - F.logsigmoid(-fake_rel).mean()
    loss_g = -F.logsigmoid(-real_rel).mean() - F.logsigmoid(fake_rel).mean()
    return loss_d, loss_g


# ---------------------------------------------------------- perceptual


class RandomConvBackbone(nn.Module):
    """Fixed random-weight conv pyramid used as the default perceptual feature extractor."""

    def __init__(self, seed: int = 1234, widths=(16, 32, 64)):
        super().__init__()
        gen = torch.Generator().manual_seed(seed)
        layers = []
        cin = 3
        for i, cout in enumerate(widths):
            conv = nn.Conv2d(cin, cout, 3, stride=1 if i == 0 else 2, padding=1)
            with torch.no_grad():
                bound = math.sqrt(6.0 / (cin * 9))
                conv.weight.copy_((torch.rand(conv.weight.shape, generator=gen) * 2 - 1) * bound)
                conv.bias.zero_()
            layers.append(conv)
            cin = cout
        self.stages = nn.ModuleList(layers)
        for p in self.parameters():
            p.requires_grad_(False)

    def forward(self, x):
        feats = []
        h = x * 2 - 1
        for conv in self.stages:
            h = F.relu(conv(h))
            feats.append(h)
        return feats


class VGG16Backbone(nn.Module):
    """LPIPS-style VGG16 stages; needs torchvision ImageNet weights to be available locally."""

    LAYER_ENDS = (4, 9, 16, 23, 30)

    def __init__(self):
        super().__init__()
        try:
            from torchvision.models import VGG16_Weights, vgg16

            net = vgg16(weights=VGG16_Weights.IMAGENET1K_V1).features.eval()
        except Exception as exc:  # weights not cached, no network, ...
            raise RuntimeError(f"VGG16 backbone unavailable: {exc}") from exc
        for p in net.parameters():
            p.requires_grad_(False)
        self.net = net
        self.register_buffer("mean", torch.tensor([0.485, 0.456, 0.406]).view(1, 3, 1, 1))
        self.register_buffer("std", torch.tensor([0.229, 0.224, 0.225]).view(1, 3, 1, 1))

    def forward(self, x):
        h = (x - self.mean) / self.std
        feats = []
        start = 0
        for end in self.LAYER_ENDS:
            h = self.net[start:end](h)
            feats.append(h)
            start = end
        return feats


def _unit_normalize(f, eps=1e-10):
    return f / torch.sqrt((f * f).sum(dim=1, keepdim=True) + eps)


def perceptual_loss(x, x_hat, backbone: nn.Module | None, weights=None) -> torch.Tensor:
    """Sum over stages of the mean squared distance between channel-normalised features."""
    if backbone is None:
        raise RuntimeError("perceptual backbone unavailable")
    if x.shape != x_hat.shape:
        raise ValueError(f"shape mismatch: {tuple(x.shape)} vs {tuple(x_hat.shape)}")
    fa = backbone(x)
    fb = backbone(x_hat)
    total = x.new_zeros(())
    for i, (a, b) in enumerate(zip(fa, fb)):
        w = 1.0 if weights is None else weights[i]
        d = ((_unit_normalize(a) - _unit_normalize(b)) ** 2).sum(dim=1)
        total = total + w * d.mean()
    return total


# --------------------------------------------------------------- total


def total_loss(bits, x, x_hat, weights: LossWeights, period: int = 4, backbone=None,
               real_scores=None, fake_scores=None, num_pixels=None):
    """Compose the rate-distortion-perception objective.

    ``bits`` is the total estimated bits for ``x``; it is normalised by the
    pixel count (``B * H * W`` unless ``num_pixels`` is given).  Terms with a
    zero weight are skipped and reported as 0.  Returns ``(total_tensor, LossReport)``.
    """
    if x.shape != x_hat.shape:
        raise ValueError(f"shape mismatch: {tuple(x.shape)} vs {tuple(x_hat.shape)}")
    if num_pixels is None:
        num_pixels = x.shape[0] * x.shape[-2] * x.shape[-1]
    zero = x_hat.new_zeros(())
    rate = torch.as_tensor(bits, dtype=x_hat.dtype) / num_pixels
    l1 = torch.mean(torch.abs(x_hat - x)) if weights.alpha else zero
    mse = torch.mean((x_hat - x) ** 2) if weights.mse else zero
    perc = perceptual_loss(x, x_hat, backbone) if weights.beta else zero
    pc = pc_loss(x, x_hat, period) if weights.phi else zero
    gan_g = gan_d = zero
    if weights.gamma and real_scores is not None and fake_scores is not None:
        gan_d, gan_g = ragan_losses(real_scores, fake_scores)
    total = (weights.lam * rate + weights.mse * mse + weights.alpha * l1 + weights.beta * perc
             + weights.gamma * gan_g + weights.phi * pc)
    d = lambda t: float(t.detach())  # noqa: E731
    report = LossReport(
        rate_bits_per_pixel=d(rate), l1=d(l1), perceptual=d(perc), gan_g=d(gan_g),
        gan_d=d(gan_d), pc=d(pc), mse=d(mse), total=d(total), lam=weights.lam,
    )
    return total, report
