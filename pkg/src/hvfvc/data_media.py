"""Frame I/O, synthetic test sequences and spectral diagnostics.

Frames are ``(H, W, 3)`` float32 arrays in ``[0, 1]``.  Sequences are stored
padded to a multiple of :data:`PAD_MULTIPLE`; the original size is kept so
outputs can be cropped back.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image
from scipy.fft import dctn, fft2

PAD_MULTIPLE = 16

# Keeps the score finite on flat frames.
_SCORE_EPS = 1e-6


@dataclass(frozen=True)
class VideoSequence:
    frames: np.ndarray
    frame_rate: float = 30.0
    original_size: tuple[int, int] | None = None  # (height, width) before padding

    def __post_init__(self):
        frames = np.asarray(self.frames, dtype=np.float32)
        if frames.ndim != 4 or frames.shape[-1] != 3:
            raise ValueError(f"expected (T, H, W, 3) frames, got {frames.shape}")
        if len(frames) < 1:
            raise ValueError("a sequence needs at least one frame")
        if frames.size and (frames.min() < 0.0 or frames.max() > 1.0):
            raise ValueError("frame values must lie in [0, 1]")
        object.__setattr__(self, "frames", frames)
        if self.original_size is None:
            object.__setattr__(self, "original_size", tuple(frames.shape[1:3]))

    def __len__(self) -> int:
        return len(self.frames)

    @property
    def height(self) -> int:
        return self.frames.shape[1]

    @property
    def width(self) -> int:
        return self.frames.shape[2]

    def cropped(self) -> np.ndarray:
        h, w = self.original_size
        return self.frames[:, :h, :w]


@dataclass(frozen=True)
class SynthSpec:
    """Moving-occluder scene description.

    The occluder spans the full frame height and covers columns
    ``[start + velocity * t, start + velocity * t + width)`` at frame ``t``.
    """

    size: int | tuple[int, int] = 64
    num_frames: int = 4
    occluder_velocity: int = 8
    texture_seed: int = 0
    occluder_width: int | None = None
    occluder_start: int = 0
    frame_rate: float = 30.0


# ----------------------------------------------------------------- padding


def pad_frame(frame: np.ndarray, multiple: int = PAD_MULTIPLE) -> np.ndarray:
    h, w = frame.shape[:2]
    ph = (-h) % multiple
    pw = (-w) % multiple
    if ph == 0 and pw == 0:
        return frame
    return np.pad(frame, ((0, ph), (0, pw), (0, 0)), mode="edge")


def crop_frame(frame: np.ndarray, size: tuple[int, int]) -> np.ndarray:
    return frame[: size[0], : size[1]]


def make_sequence(frames, frame_rate: float = 30.0, multiple: int = PAD_MULTIPLE) -> VideoSequence:
    """Wrap raw frames into a padded :class:`VideoSequence`."""
    frames = [np.asarray(f, dtype=np.float32) for f in frames]
    if not frames:
        raise ValueError("no frames found")
    shape = frames[0].shape
    for i, f in enumerate(frames):
        if f.shape != shape:
            raise ValueError(f"mixed dimensions: frame {i} is {f.shape}, expected {shape}")
    padded = np.stack([pad_frame(f, multiple) for f in frames])
    return VideoSequence(padded, frame_rate=frame_rate, original_size=tuple(shape[:2]))


# --------------------------------------------------------------------- I/O


def read_png(path) -> np.ndarray:
    try:
        with Image.open(path) as im:
            arr = np.asarray(im.convert("RGB"), dtype=np.float32)
    except (OSError, ValueError) as exc:
        raise ValueError(f"undecodable frame {path}: {exc}") from exc
    return arr / 255.0


def write_png(path, frame: np.ndarray) -> None:
    arr = np.clip(np.rint(np.asarray(frame) * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(arr).save(path)


def write_mask_png(path, mask: np.ndarray) -> None:
    Image.fromarray(np.where(mask, 255, 0).astype(np.uint8)).save(path)


def read_mask_png(path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("L")) > 127


def _frame_index(path: Path) -> tuple:
    m = re.search(r"(\d+)", path.stem)
    return (int(m.group(1)) if m else -1, path.name)


def list_frame_files(path) -> list[Path]:
    path = Path(path)
    files = sorted(path.glob("frame_*.png"), key=_frame_index)
    if not files:
        files = sorted((p for p in path.glob("*.png") if not p.name.startswith("mask_")), key=_frame_index)
    return files


def load_sequence(path, fmt: str | None = None, frame_rate: float = 30.0) -> VideoSequence:
    """Load a PNG directory or a Y4M file, padding frames to a multiple of 16."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"no such path: {path}")
    if fmt is None:
        fmt = "y4m" if path.suffix.lower() == ".y4m" else "png-dir"
    if fmt == "png-dir":
        if not path.is_dir():
            raise ValueError(f"{path} is not a directory")
        files = list_frame_files(path)
        if not files:
            raise ValueError("no frames found")
        return make_sequence([read_png(f) for f in files], frame_rate=frame_rate)
    if fmt == "y4m":
        frames, rate = read_y4m(path)
        return make_sequence(frames, frame_rate=rate)
    raise ValueError(f"unknown format {fmt!r}")


def save_sequence(seq: VideoSequence, path, crop: bool = True) -> list[Path]:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    frames = seq.cropped() if crop else seq.frames
    out = []
    for i, f in enumerate(frames):
        p = path / f"frame_{i:06d}.png"
        write_png(p, f)
        out.append(p)
    return out


def load_masks(path) -> list[np.ndarray] | None:
    files = sorted(Path(path).glob("mask_*.png"), key=_frame_index)
    if not files:
        return None
    return [read_mask_png(f) for f in files]


# BT.601 limited-range YCbCr <-> RGB.
def ycbcr_to_rgb(y, cb, cr) -> np.ndarray:
    y = (y.astype(np.float64) - 16.0) * (255.0 / 219.0)
    cb = (cb.astype(np.float64) - 128.0) * (255.0 / 224.0)
    cr = (cr.astype(np.float64) - 128.0) * (255.0 / 224.0)
    r = y + 1.402 * cr
    g = y - 0.344136 * cb - 0.714136 * cr
    b = y + 1.772 * cb
    return np.clip(np.stack([r, g, b], axis=-1) / 255.0, 0.0, 1.0).astype(np.float32)


def rgb_to_ycbcr(rgb: np.ndarray):
    rgb = np.asarray(rgb, dtype=np.float64) * 255.0
    r, g, b = rgb[..., 0], rgb[..., 1], rgb[..., 2]
    y = 0.299 * r + 0.587 * g + 0.114 * b
    cb = (b - y) / 1.772
    cr = (r - y) / 1.402
    return (
        y * (219.0 / 255.0) + 16.0,
        cb * (224.0 / 255.0) + 128.0,
        cr * (224.0 / 255.0) + 128.0,
    )


def _parse_rate(token: str) -> float:
    num, _, den = token.partition(":")
    return float(num) / float(den or 1)


def read_y4m(path) -> tuple[list[np.ndarray], float]:
    data = Path(path).read_bytes()
    nl = data.find(b"\n")
    if nl < 0 or not data.startswith(b"YUV4MPEG2"):
        raise ValueError(f"{path} is not a YUV4MPEG2 file")
    params = data[:nl].decode("ascii").split()[1:]
    width = height = None
    rate = 30.0
    chroma = "420"
    for p in params:
        if p[0] == "W":
            width = int(p[1:])
        elif p[0] == "H":
            height = int(p[1:])
        elif p[0] == "F":
            rate = _parse_rate(p[1:])
        elif p[0] == "C":
            chroma = p[1:]
    if width is None or height is None:
        raise ValueError("y4m header missing W/H")
    if not chroma.startswith("420"):
        raise ValueError(f"unsupported y4m chroma {chroma}")
    cw, ch = (width + 1) // 2, (height + 1) // 2
    frame_bytes = width * height + 2 * cw * ch
    frames = []
    pos = nl + 1
    while pos < len(data):
        eol = data.find(b"\n", pos)
        if eol < 0 or not data[pos:eol].startswith(b"FRAME"):
            raise ValueError("undecodable frame: bad FRAME marker")
        pos = eol + 1
        chunk = data[pos : pos + frame_bytes]
        if len(chunk) != frame_bytes:
            raise ValueError("undecodable frame: truncated data")
        pos += frame_bytes
        buf = np.frombuffer(chunk, dtype=np.uint8)
        y = buf[: width * height].reshape(height, width)
        cb = buf[width * height : width * height + cw * ch].reshape(ch, cw)
        cr = buf[width * height + cw * ch :].reshape(ch, cw)
        cb = cb.repeat(2, axis=0).repeat(2, axis=1)[:height, :width]
        cr = cr.repeat(2, axis=0).repeat(2, axis=1)[:height, :width]
        frames.append(ycbcr_to_rgb(y, cb, cr))
    if not frames:
        raise ValueError("no frames found")
    return frames, rate


def write_y4m(path, frames, frame_rate: int = 30) -> None:
    frames = [np.asarray(f) for f in frames]
    h, w = frames[0].shape[:2]
    out = [f"YUV4MPEG2 W{w} H{h} F{frame_rate}:1 Ip A1:1 C420jpeg\n".encode("ascii")]
    for f in frames:
        y, cb, cr = rgb_to_ycbcr(f)
        # 2x2 box average for chroma; pad odd sizes by edge replication
        cb = np.pad(cb, ((0, h % 2), (0, w % 2)), mode="edge")
        cr = np.pad(cr, ((0, h % 2), (0, w % 2)), mode="edge")
        cb = cb.reshape(cb.shape[0] // 2, 2, cb.shape[1] // 2, 2).mean(axis=(1, 3))
        cr = cr.reshape(cr.shape[0] // 2, 2, cr.shape[1] // 2, 2).mean(axis=(1, 3))
        out.append(b"FRAME\n")
        for plane in (y, cb, cr):
            out.append(np.clip(np.rint(plane), 0, 255).astype(np.uint8).tobytes())
    Path(path).write_bytes(b"".join(out))


# --------------------------------------------------------------- synthesis


def _texture(h: int, w: int, seed: int) -> np.ndarray:
    """Self-similar background: tiled motif + oriented stripes + smooth colour field."""
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    img = np.zeros((h, w, 3))
    for c in range(3):
        fx, fy = rng.uniform(0.15, 0.45, size=2)
        phase = rng.uniform(0, 2 * np.pi)
        img[..., c] += 0.18 * np.sin(fx * xx + fy * yy + phase)
    tile = rng.uniform(-0.15, 0.15, size=(8, 8, 3))
    img += np.tile(tile, (h // 8 + 1, w // 8 + 1, 1))[:h, :w]
    base = rng.uniform(0.35, 0.65, size=3)
    ramp = rng.uniform(-0.1, 0.1, size=(2, 3))
    img += base + ramp[0] * (yy / h)[..., None] + ramp[1] * (xx / w)[..., None]
    return np.clip(img, 0.0, 1.0)


def occluder_columns(spec: SynthSpec, t: int, width: int) -> tuple[int, int]:
    occ_w = spec.occluder_width if spec.occluder_width is not None else width // 2
    x0 = spec.occluder_start + spec.occluder_velocity * t
    return max(0, x0), min(width, x0 + occ_w)


def synth_occlusion_sequence(spec: SynthSpec) -> tuple[VideoSequence, list[np.ndarray]]:
    """Static textured background progressively uncovered by a moving occluder.

    Returns the sequence and one boolean mask per frame marking pixels visible
    at ``t`` but hidden at every earlier frame.  Frame 0 has no reference, so
    its mask is empty.
    """
    if isinstance(spec.size, int):
        h = w = spec.size
    else:
        h, w = spec.size
    if h <= 0 or w <= 0 or h % PAD_MULTIPLE or w % PAD_MULTIPLE:
        raise ValueError(f"size must be a positive multiple of {PAD_MULTIPLE}, got {spec.size}")
    if spec.num_frames < 2:
        raise ValueError("num_frames must be >= 2")

    background = _texture(h, w, spec.texture_seed)
    rng = np.random.default_rng(spec.texture_seed + 7919)
    occ_colour = rng.uniform(0.1, 0.9, size=3)
    stripes = 0.05 * np.sign(np.sin(np.arange(h) * 0.8))[:, None, None]

    frames = []
    masks = []
    ever_visible = np.zeros((h, w), dtype=bool)
    for t in range(spec.num_frames):
        a, b = occluder_columns(spec, t, w)
        hidden = np.zeros((h, w), dtype=bool)
        hidden[:, a:b] = True
        frame = background.copy()
        if b > a:
            frame[:, a:b] = np.clip(occ_colour + stripes, 0, 1)
        frames.append(frame.astype(np.float32))
        visible = ~hidden
        masks.append(visible & ~ever_visible if t > 0 else np.zeros((h, w), dtype=bool))
        ever_visible |= visible
    return VideoSequence(np.stack(frames), frame_rate=spec.frame_rate), masks


def save_synth(seq: VideoSequence, masks, path) -> None:
    path = Path(path)
    save_sequence(seq, path)
    for i, m in enumerate(masks):
        write_mask_png(path / f"mask_{i:06d}.png", m)


# ------------------------------------------------------------ checkerboard


def _checker_pattern(h: int, w: int, period: int) -> np.ndarray:
    half = period // 2
    yy, xx = np.mgrid[0:h, 0:w]
    return np.where(((yy // half) + (xx // half)) % 2 == 0, 1.0, -1.0)


def inject_checkerboard(frame: np.ndarray, period: int, amplitude: float) -> np.ndarray:
    """Add ``+/-amplitude`` in alternating ``period/2`` cells, clipped to [0, 1]."""
    frame = np.asarray(frame)
    h, w = frame.shape[:2]
    if period <= 0 or period % 2:
        raise ValueError(f"period must be a positive even integer, got {period}")
    if h % period or w % period:
        raise ValueError(f"period {period} does not divide frame size {h}x{w}")
    if amplitude == 0:
        return frame.copy()
    pattern = _checker_pattern(h, w, period)[..., None]
    return np.clip(frame + amplitude * pattern, 0.0, 1.0).astype(frame.dtype)


def spectrum_map(frame: np.ndarray) -> np.ndarray:
    """Per-channel magnitude of the orthonormal 2-D DCT, shape ``(H, W, 3)``."""
    return np.abs(dctn(np.asarray(frame, dtype=np.float64), type=2, axes=(0, 1), norm="ortho"))


def harmonic_mask(h: int, w: int, period: int) -> np.ndarray:
    """Frequency bins at multiples of N/period along each axis, DC excluded."""
    rows = np.zeros(h, dtype=bool)
    cols = np.zeros(w, dtype=bool)
    rows[:: max(1, h // period)] = True
    cols[:: max(1, w // period)] = True
    mask = rows[:, None] & cols[None, :]
    mask[0, 0] = False
    return mask


def checkerboard_score(frame: np.ndarray, period: int) -> float:
    """Share of AC spectral magnitude sitting on the period's harmonic bins.

    Uses the unitary 2-D DFT: a pattern of period P that tiles the frame lands
    exactly on bins that are multiples of N/P, with no leakage.
    """
    frame = np.asarray(frame, dtype=np.float64)
    h, w = frame.shape[:2]
    if period <= 0 or h % period or w % period:
        raise ValueError(f"period {period} must divide frame size {h}x{w}")
    mag = np.abs(fft2(frame, axes=(0, 1), norm="ortho")).mean(axis=-1)
    mag[0, 0] = 0.0
    return float(mag[harmonic_mask(h, w, period)].sum() / (mag.sum() + _SCORE_EPS))
