"""Frame metrics, RD curves and Bjontegaard delta rate."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.interpolate import PchipInterpolator
from scipy.ndimage import convolve1d

from .data_media import VideoSequence, checkerboard_score

PSNR_CAP = 99.0
MSSSIM_WEIGHTS = (0.0448, 0.2856, 0.3001, 0.2363, 0.1333)
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
_K1, _K2 = 0.01, 0.03


def psnr(x: np.ndarray, y: np.ndarray, peak: float = 1.0) -> float:
    """PSNR in dB, capped at ``PSNR_CAP`` so identical frames stay finite."""
    if x.shape != y.shape:
        raise ValueError(f"shape mismatch {x.shape} vs {y.shape}")
    mse = float(np.mean((np.asarray(x, np.float64) - np.asarray(y, np.float64)) ** 2))
    if mse == 0.0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * math.log10(peak * peak / mse))


def _gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    r = np.arange(size) - (size - 1) / 2
    g = np.exp(-(r**2) / (2 * sigma**2))
    return g / g.sum()


def _filter(img: np.ndarray, win: np.ndarray) -> np.ndarray:
    # valid-mode separable filtering over the two spatial axes
    out = convolve1d(img, win, axis=0, mode="reflect")
    out = convolve1d(out, win, axis=1, mode="reflect")
    h = len(win) // 2
    return out[h : img.shape[0] - h, h : img.shape[1] - h]


def _ssim_terms(x: np.ndarray, y: np.ndarray, win: np.ndarray, peak: float):
    c1, c2 = (_K1 * peak) ** 2, (_K2 * peak) ** 2
    mx, my = _filter(x, win), _filter(y, win)
    sxx = _filter(x * x, win) - mx * mx
    syy = _filter(y * y, win) - my * my
    sxy = _filter(x * y, win) - mx * my
    cs = (2 * sxy + c2) / (sxx + syy + c2)
    lum = (2 * mx * my + c1) / (mx * mx + my * my + c1)
    return float(np.mean(lum * cs)), float(np.mean(cs))


def msssim_levels(height: int, width: int) -> int:
    """Number of scales that keep the coarsest level at least one window wide."""
    levels = len(MSSSIM_WEIGHTS)
    while levels > 1 and min(height, width) / 2 ** (levels - 1) < SSIM_WINDOW:
        levels -= 1
    return levels


def msssim(x: np.ndarray, y: np.ndarray, peak: float = 1.0) -> float:
    """Multi-scale SSIM of (H, W, C) images, averaged over channels.

    Uses the standard 5-scale weights; small frames drop the coarsest scales
    and renormalise the remaining weights (see ``msssim_levels``).
    """
    if x.shape != y.shape:
        raise ValueError(f"shape mismatch {x.shape} vs {y.shape}")
    x = np.asarray(x, np.float64)
    y = np.asarray(y, np.float64)
    if x.ndim == 2:
        x, y = x[..., None], y[..., None]
    levels = msssim_levels(*x.shape[:2])
    if min(x.shape[:2]) < SSIM_WINDOW:
        raise ValueError(f"frame {x.shape[:2]} smaller than the {SSIM_WINDOW}px SSIM window")
    weights = np.array(MSSSIM_WEIGHTS[:levels])
    weights = weights / weights.sum()
    win = _gaussian_window()
    scores = []
    for c in range(x.shape[2]):
        a, b = x[..., c], y[..., c]
        vals = []
        for level in range(levels):
            ssim, cs = _ssim_terms(a, b, win, peak)
            vals.append(max(ssim if level == levels - 1 else cs, 0.0))
            if level < levels - 1:
                a, b = _downsample(a), _downsample(b)
        scores.append(float(np.prod(np.power(vals, weights))))
    return float(np.clip(np.mean(scores), 0.0, 1.0))


def _downsample(img: np.ndarray) -> np.ndarray:
    h, w = img.shape[0] // 2 * 2, img.shape[1] // 2 * 2
    img = img[:h, :w]
    return 0.25 * (img[0::2, 0::2] + img[1::2, 0::2] + img[0::2, 1::2] + img[1::2, 1::2])


def masked_l1(x: np.ndarray, y: np.ndarray, mask: np.ndarray) -> float | None:
    """Mean absolute error inside ``mask``; ``None`` when the mask is empty."""
    mask = np.asarray(mask, bool)
    if not mask.any():
        return None
    return float(np.abs(np.asarray(x, np.float64) - y)[mask].mean())


@dataclass
class MetricsRow:
    sequence: str
    frame: int | str  # frame index, or "aggregate"
    bpp: float | None
    psnr: float
    msssim: float
    checkerboard_score: float
    masked_l1: float | None = None

    FIELDS = ("sequence", "frame", "bpp", "psnr", "msssim", "checkerboard_score", "masked_l1")

    def as_dict(self) -> dict:
        return asdict(self)


def compute_metrics(reference: VideoSequence, reconstructed: VideoSequence, masks=None,
                    sequence_id: str = "seq", bpp=None, period: int = 4) -> list[MetricsRow]:
    """One row per frame plus an ``aggregate`` row (means over frames).

    ``bpp`` may be a per-frame sequence or a single number used for every frame.
    """
    ref, rec = reference.frames, reconstructed.frames
    if ref.shape != rec.shape:
        raise ValueError(f"shape mismatch {ref.shape} vs {rec.shape}")
    if masks is not None and len(masks) != len(ref):
        raise ValueError(f"{len(masks)} masks for {len(ref)} frames")
    if bpp is None or np.isscalar(bpp):
        bpps = [bpp] * len(ref)
    else:
        bpps = list(bpp)
        if len(bpps) != len(ref):
            raise ValueError(f"{len(bpps)} bpp values for {len(ref)} frames")
    rows = []
    for t in range(len(ref)):
        ml1 = masked_l1(ref[t], rec[t], masks[t]) if masks is not None else None
        rows.append(MetricsRow(sequence_id, t, None if bpps[t] is None else float(bpps[t]),
                               psnr(ref[t], rec[t]), msssim(ref[t], rec[t]),
                               _checker(rec[t], period), ml1))
    rows.append(_aggregate(rows, sequence_id))
    return rows


def _checker(frame: np.ndarray, period: int) -> float:
    # score the largest top-left region the period tiles exactly
    h, w = frame.shape[0] // period * period, frame.shape[1] // period * period
    return checkerboard_score(frame[:h, :w], period)


def _mean(values):
    values = [v for v in values if v is not None]
    return float(np.mean(values)) if values else None


def _aggregate(rows: list[MetricsRow], sequence_id: str) -> MetricsRow:
    return MetricsRow(
        sequence_id, "aggregate",
        _mean([r.bpp for r in rows]),
        _mean([r.psnr for r in rows]),
        _mean([r.msssim for r in rows]),
        _mean([r.checkerboard_score for r in rows]),
        _mean([r.masked_l1 for r in rows]),
    )


# ------------------------------------------------------------------ BD-rate


@dataclass
class RDCurve:
    points: list[tuple[float, float]]  # (bpp, metric)
    metric: str = "psnr"
    label: str = ""

    def __post_init__(self):
        pts = sorted((float(r), float(m)) for r, m in self.points)
        if any(r <= 0 for r, _ in pts):
            raise ValueError("bpp values must be positive")
        if any(a[0] == b[0] for a, b in zip(pts, pts[1:])):
            raise ValueError("bpp values must be distinct")
        self.points = pts

    @property
    def rates(self) -> np.ndarray:
        return np.array([p[0] for p in self.points])

    @property
    def values(self) -> np.ndarray:
        return np.array([p[1] for p in self.points])


@dataclass
class BDResult:
    percent: float
    low_confidence: bool
    interval: tuple[float, float] = field(default=(0.0, 0.0))


def _log_rate_integral(curve: RDCurve, lo: float, hi: float) -> float:
    """Integral of log-rate over metric in [lo, hi]."""
    order = np.argsort(curve.values)
    m = curve.values[order]
    r = np.log(curve.rates[order])
    if np.any(np.diff(m) <= 0):
        raise ValueError(f"metric must be strictly monotone in rate for curve {curve.label!r}")
    if len(m) >= 4:
        return float(PchipInterpolator(m, r).integrate(lo, hi))
    poly = np.polynomial.Polynomial.fit(m, r, deg=len(m) - 1).integ()
    return float(poly(hi) - poly(lo))


def bd_rate_detail(anchor: RDCurve, test: RDCurve) -> BDResult:
    if len(anchor.points) < 2 or len(test.points) < 2:
        raise ValueError("BD-rate needs at least 2 points per curve")
    lo = max(anchor.values.min(), test.values.min())
    hi = min(anchor.values.max(), test.values.max())
    if not hi > lo:
        raise ValueError("RD curves have no overlapping metric range")
    a = _log_rate_integral(anchor, lo, hi)
    t = _log_rate_integral(test, lo, hi)
    percent = (math.exp((t - a) / (hi - lo)) - 1.0) * 100.0
    low = min(len(anchor.points), len(test.points)) < 4
    return BDResult(percent, low, (float(lo), float(hi)))


def bd_rate(anchor: RDCurve, test: RDCurve) -> float:
    """Average rate difference of ``test`` vs ``anchor`` in percent (negative saves rate)."""
    if anchor.points == test.points:
        return 0.0
    return bd_rate_detail(anchor, test).percent


# External metrics (FID, KID, VMAF, ...) are plugged in by name; none ship here.
METRIC_PLUGINS: dict = {}


def register_metric(name: str, fn) -> None:
    """Register ``fn(reference_frames, reconstructed_frames) -> float`` under ``name``."""
    if name in ("psnr", "msssim", "checker"):
        raise ValueError(f"{name!r} is a built-in metric")
    METRIC_PLUGINS[name] = fn
