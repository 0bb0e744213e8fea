"""Confidence-based feature reconstruction.

Residual and confidence share one coded latent.  The decoded confidence
gates the inter prediction, and low-confidence positions are enhanced by
LSH-bucketed attention over the whole frame at two scales.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import nn

from .backbone import Analysis, GaussianEntropyModel, Synthesis


@dataclass(frozen=True)
class LSHParams:
    n_rounds: int = 4
    bucket_size: int = 64
    n_buckets: int | None = None  # None: 2 * ceil(N / bucket_size), at least 2

    def buckets_for(self, n: int) -> int:
        if self.n_buckets is not None:
            if self.n_buckets < 2 or self.n_buckets % 2:
                raise ValueError("n_buckets must be even and >= 2")
            return self.n_buckets
        return max(2, 2 * math.ceil(n / self.bucket_size))


@dataclass
class BucketAssignment:
    """One hashing round: positions in sorted order, cut into chunks of at most ``bucket_size``."""

    hashes: torch.Tensor
    permutation: torch.Tensor
    bucket_size: int

    @property
    def buckets(self) -> list[torch.Tensor]:
        return list(torch.split(self.permutation, self.bucket_size))

    @property
    def chunk_ids(self) -> torch.Tensor:
        ids = torch.empty_like(self.permutation)
        ids[self.permutation] = torch.arange(len(self.permutation)) // self.bucket_size
        return ids


def sample_rotations(dim, n_buckets, n_rounds, generator=None, dtype=torch.float32):
    return torch.randn(n_rounds, dim, n_buckets // 2, generator=generator, dtype=dtype)


def lsh_hash(features: torch.Tensor, rotation: torch.Tensor) -> torch.Tensor:
    """Spherical LSH: ``argmax([fR; -fR])`` over the last axis."""
    if features.shape[-1] != rotation.shape[0]:
        raise ValueError(f"feature dim {features.shape[-1]} != rotation rows {rotation.shape[0]}")
    proj = features @ rotation.to(features.dtype)
    return torch.cat([proj, -proj], dim=-1).argmax(dim=-1)


def lsh_bucketize(features: torch.Tensor, lsh: LSHParams, seed: int | None = None,
                  rotations: torch.Tensor | None = None) -> list[BucketAssignment]:
    """Hash ``features`` (N, C), stable-sort by hash and chunk, once per round."""
    n, c = features.shape
    if rotations is None:
        gen = torch.Generator().manual_seed(seed if seed is not None else 0)
        rotations = sample_rotations(c, lsh.buckets_for(n), lsh.n_rounds, gen)
    with torch.no_grad():
        out = []
        for r in range(rotations.shape[0]):
            h = lsh_hash(features, rotations[r])
            perm = torch.argsort(h, stable=True)
            out.append(BucketAssignment(h, perm, lsh.bucket_size))
    return out


def bucket_attention(vectors: torch.Tensor, transformed: torch.Tensor,
                     valid: torch.Tensor | None = None) -> torch.Tensor:
    """Softmax-kernel attention inside buckets.

    ``vectors`` (..., n, C) provide the similarity ``exp(<p, q> / sqrt(C))``;
    ``transformed`` (..., n, D) are the ``g(f_q)`` being averaged.  ``valid``
    masks padding keys.
    """
    scores = vectors @ vectors.transpose(-1, -2) / math.sqrt(vectors.shape[-1])
    if valid is not None:
        scores = scores.masked_fill(~valid.unsqueeze(-2), float("-inf"))
    return torch.softmax(scores, dim=-1) @ transformed


def lsh_attention(features: torch.Tensor, transformed: torch.Tensor, lsh: LSHParams,
                  rotations: torch.Tensor) -> torch.Tensor:
    """Multi-round sort-and-chunk attention; features (B, N, C) -> (B, N, D), rounds averaged."""
    b, n, c = features.shape
    k = lsh.bucket_size
    n_chunks = math.ceil(n / k)
    pad = n_chunks * k - n
    d = transformed.shape[-1]
    out = torch.zeros(b, n, d, dtype=transformed.dtype, device=transformed.device)
    valid = torch.ones(b, n_chunks * k, dtype=torch.bool)
    if pad:
        valid[:, n:] = False
    valid = valid.view(b, n_chunks, k)
    for r in range(rotations.shape[0]):
        with torch.no_grad():
            h = lsh_hash(features, rotations[r])
            order = torch.argsort(h, dim=-1, stable=True)
        f_sorted = features.gather(1, order.unsqueeze(-1).expand(b, n, c))
        g_sorted = transformed.gather(1, order.unsqueeze(-1).expand(b, n, d))
        if pad:
            f_sorted = F.pad(f_sorted, (0, 0, 0, pad))
            g_sorted = F.pad(g_sorted, (0, 0, 0, pad))
        att = bucket_attention(f_sorted.view(b, n_chunks, k, c), g_sorted.view(b, n_chunks, k, d), valid)
        att = att.reshape(b, n_chunks * k, d)[:, :n]
        out = out.scatter_add(1, order.unsqueeze(-1).expand(b, n, d), att)
    return out / rotations.shape[0]


class IntraAggregation(nn.Module):
    """Dual-scale LSH attention: full scale + 2x pooled scale, fused by a 1x1 conv.

    In training mode rotations are redrawn from an internal generator on each
    call; in eval mode they are drawn from a generator reset to ``seed`` so
    encoder and decoder agree.
    """

    def __init__(self, channels, lsh: LSHParams | None = None, seed: int = 0):
        super().__init__()
        self.lsh = lsh or LSHParams()
        self.seed = seed
        self.g_full = nn.Conv2d(channels, channels, 1)
        self.g_coarse = nn.Conv2d(channels, channels, 1)
        self.fuse = nn.Conv2d(2 * channels, channels, 1)
        self._train_gen = torch.Generator().manual_seed(seed)

    def _rotations(self, n, c, dtype):
        gen = self._train_gen if self.training else torch.Generator().manual_seed(self.seed)
        return sample_rotations(c, self.lsh.buckets_for(n), self.lsh.n_rounds, gen).to(dtype)

    def branch(self, x: torch.Tensor, transform: nn.Module) -> torch.Tensor:
        b, c, h, w = x.shape
        flat = x.flatten(2).transpose(1, 2)
        g = transform(x).flatten(2).transpose(1, 2)
        out = lsh_attention(flat, g, self.lsh, self._rotations(h * w, c, x.dtype))
        return out.transpose(1, 2).reshape(b, -1, h, w)

    def forward(self, x):
        full = self.branch(x, self.g_full)
        h, w = x.shape[-2:]
        if h >= 2 and w >= 2 and h % 2 == 0 and w % 2 == 0:
            coarse = self.branch(F.avg_pool2d(x, 2), self.g_coarse)
            coarse = F.interpolate(coarse, size=(h, w), mode="bilinear", align_corners=False)
        else:
            coarse = full
        return self.fuse(torch.cat([full, coarse], dim=1))


def intra_aggregate(feature: torch.Tensor, module: IntraAggregation) -> torch.Tensor:
    return module(feature)


class ResidualConfidenceCoder(nn.Module):
    """Codes <F_t, F~_t> into one latent; decodes a residual and a sigmoid confidence."""

    def __init__(self, channels, latent_channels, hyper_channels):
        super().__init__()
        self.channels = channels
        self.g_a = Analysis(2 * channels, channels, latent_channels)
        self.g_s = Synthesis(latent_channels, channels, 2 * channels)
        self.entropy = GaussianEntropyModel(latent_channels, hyper_channels)

    def decode(self, w_hat):
        out = self.g_s(w_hat)
        residual, conf = out[:, : self.channels], out[:, self.channels :]
        return residual, torch.sigmoid(conf)

    def forward(self, feature, predicted, mode="train", noise=None):
        """Return ``(residual, confidence, bits, (w_hat, z_hat))``."""
        if feature.shape != predicted.shape:
            raise ValueError(f"shape mismatch: {tuple(feature.shape)} vs {tuple(predicted.shape)}")
        w = self.g_a(torch.cat([feature, predicted], dim=1))
        w_hat, z_hat, bits_w, bits_z = self.entropy(w, mode=mode, noise=noise)
        residual, conf = self.decode(w_hat)
        return residual, conf, bits_w.sum() + bits_z.sum(), (w_hat, z_hat)


def code_residual_confidence(feature, predicted, coder: ResidualConfidenceCoder, mode="eval", noise=None):
    residual, conf, bits, _ = coder(feature, predicted, mode=mode, noise=noise)
    return residual, conf, bits


def _check_same(*tensors):
    shape = tensors[0].shape
    for t in tensors[1:]:
        if t.shape != shape:
            raise ValueError(f"shape mismatch: {tuple(shape)} vs {tuple(t.shape)}")


def initial_reconstruct(predicted, confidence, residual):
    """Confidence-gated prediction plus residual."""
    _check_same(predicted, confidence, residual)
    return predicted * confidence + residual


def final_reconstruct(initial, confidence, aggregate):
    """Add intra aggregation where confidence is low.

    ``aggregate`` is either the aggregated map or a callable applied to ``initial``.
    """
    enhanced = aggregate(initial) if callable(aggregate) else aggregate
    _check_same(initial, confidence, enhanced)
    return initial + enhanced * (1 - confidence)
