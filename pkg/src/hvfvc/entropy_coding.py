"""Range-ANS entropy coder with 16-bit quantized PMFs and an escape mechanism.

Each coded element owns a row of a :class:`PMFTable`: a window of symbol
values ``offset .. offset + K - 2`` plus one escape slot (the last column).
Values outside the element's window are sent as the escape symbol followed
by a sign bit and an Elias-gamma coded magnitude, each bit at probability 1/2.
"""

from __future__ import annotations

import numpy as np
from scipy.special import ndtr

PROB_BITS = 16
PROB_SCALE = 1 << PROB_BITS
RANS_L = 1 << 23
HALF = PROB_SCALE // 2
MAX_HALF_WIDTH = 64
TAIL_SIGMAS = 10.0


class CorruptStreamError(ValueError):
    """Raised when a payload cannot be decoded consistently."""


def quantize_pmf(probs: np.ndarray, valid: np.ndarray) -> np.ndarray:
    """Map probability rows to integer frequencies summing to ``2**16``.

    Every valid slot gets at least 1; the rounding remainder goes to the most
    probable slot.  Deterministic given identical inputs.
    """
    probs = np.where(valid, np.clip(probs, 0.0, 1.0), 0.0)
    n_valid = valid.sum(axis=1, keepdims=True)
    freq = np.where(valid, np.floor(probs * (PROB_SCALE - n_valid)).astype(np.int64) + 1, 0)
    remainder = PROB_SCALE - freq.sum(axis=1)
    top = np.argmax(np.where(valid, probs, -1.0), axis=1)
    freq[np.arange(len(freq)), top] += remainder
    return freq


class PMFTable:
    """Per-element quantized PMFs.

    ``freq`` is ``(n, K)`` with the escape slot in the last column; column
    ``j < K - 1`` stands for symbol value ``offset[i] + j``.  ``lo``/``hi``
    bound each row's in-window values (inclusive).
    """

    def __init__(self, freq: np.ndarray, offset: np.ndarray, lo: np.ndarray, hi: np.ndarray):
        self.freq = np.ascontiguousarray(freq, dtype=np.int64)
        self.offset = np.asarray(offset, dtype=np.int64)
        self.lo = np.asarray(lo, dtype=np.int64)
        self.hi = np.asarray(hi, dtype=np.int64)
        self.cdf = np.concatenate([np.zeros((len(self.freq), 1), np.int64), np.cumsum(self.freq, axis=1)], axis=1)
        if len(self.freq) and not np.all(self.cdf[:, -1] == PROB_SCALE):
            raise ValueError("PMF rows must sum to 2**16")

    def __len__(self) -> int:
        return len(self.freq)

    @property
    def escape_column(self) -> int:
        return self.freq.shape[1] - 1

    @classmethod
    def from_probs(cls, probs, offset=0) -> "PMFTable":
        """Rows of explicit probabilities over ``offset .. offset + K - 1``; an escape slot is appended."""
        probs = np.atleast_2d(np.asarray(probs, dtype=np.float64))
        n, k = probs.shape
        esc = np.clip(1.0 - probs.sum(axis=1, keepdims=True), 0.0, 1.0)
        full = np.concatenate([probs, esc], axis=1)
        valid = np.ones_like(full, dtype=bool)
        offs = np.broadcast_to(np.asarray(offset, dtype=np.int64), (n,))
        return cls(quantize_pmf(full, valid), offs, offs, offs + k - 1)

    @classmethod
    def gaussian(cls, means, scales, max_half_width: int = MAX_HALF_WIDTH,
                 tail_sigmas: float = TAIL_SIGMAS) -> "PMFTable":
        """Discretised Gaussian rows for integer symbols."""
        means = np.asarray(means, dtype=np.float64).ravel()
        scales = np.asarray(scales, dtype=np.float64).ravel()
        n = len(means)
        if n == 0:
            return cls(np.zeros((0, 2), np.int64), np.zeros(0), np.zeros(0), np.zeros(0))
        centre = np.floor(means + 0.5).astype(np.int64)
        half = np.clip(np.ceil(tail_sigmas * scales).astype(np.int64), 1, max_half_width)
        wmax = int(half.max())
        cols = np.arange(-wmax, wmax + 1)
        values = centre[:, None] + cols[None, :]
        # mass of [v - 0.5, v + 0.5], evaluated on the lower tail for accuracy
        d = np.abs(values - means[:, None])
        s = scales[:, None]
        mass = ndtr((0.5 - d) / s) - ndtr((-0.5 - d) / s)
        valid = np.abs(cols)[None, :] <= half[:, None]
        mass = np.where(valid, mass, 0.0)
        esc = np.clip(1.0 - mass.sum(axis=1, keepdims=True), 0.0, 1.0)
        probs = np.concatenate([mass, esc], axis=1)
        valid = np.concatenate([valid, np.ones((n, 1), dtype=bool)], axis=1)
        return cls(quantize_pmf(probs, valid), centre - wmax, centre - half, centre + half)

    def ideal_bits(self, symbols) -> float:
        """Exact code length (bits) this table assigns to ``symbols``, escapes included."""
        total = 0.0
        for start, freq in _symbol_ops(self, np.asarray(symbols, dtype=np.int64).ravel()):
            total -= np.log2(freq / PROB_SCALE)
        return float(total)


def _gamma_bits(value: int) -> list[int]:
    """Elias-gamma code of ``value >= 1``."""
    nbits = value.bit_length()
    return [0] * (nbits - 1) + [(value >> i) & 1 for i in range(nbits - 1, -1, -1)]


def _symbol_ops(table: PMFTable, symbols: np.ndarray):
    if len(symbols) != len(table):
        raise ValueError(f"{len(symbols)} symbols but {len(table)} PMF rows")
    esc = table.escape_column
    cols = symbols - table.offset
    inside = (symbols >= table.lo) & (symbols <= table.hi)
    cdf, freq = table.cdf, table.freq
    for i in range(len(symbols)):
        if inside[i]:
            c = cols[i]
            yield int(cdf[i, c]), int(freq[i, c])
            continue
        yield int(cdf[i, esc]), int(freq[i, esc])
        s = int(symbols[i])
        if s > table.hi[i]:
            sign, mag = 0, s - int(table.hi[i])
        else:
            sign, mag = 1, int(table.lo[i]) - s
        yield (HALF if sign else 0), HALF
        for b in _gamma_bits(mag):
            yield (HALF if b else 0), HALF


class RansEncoder:
    """Collects symbol blocks in decode order; :meth:`finish` emits the byte string."""

    def __init__(self):
        self._ops: list[tuple[int, int]] = []

    def encode(self, symbols, table: PMFTable) -> None:
        self._ops.extend(_symbol_ops(table, np.asarray(symbols, dtype=np.int64).ravel()))

    def finish(self) -> bytes:
        if not self._ops:
            return b""
        out = bytearray()
        x = RANS_L
        for start, freq in reversed(self._ops):
            x_max = ((RANS_L >> PROB_BITS) << 8) * freq
            while x >= x_max:
                out.append(x & 0xFF)
                x >>= 8
            x = ((x // freq) << PROB_BITS) + (x % freq) + start
        out += bytes([x & 0xFF, (x >> 8) & 0xFF, (x >> 16) & 0xFF, (x >> 24) & 0xFF])
        out.reverse()
        return bytes(out)


class RansDecoder:
    def __init__(self, data: bytes):
        self.data = bytes(data)
        self.pos = 0
        if not self.data:
            self.x = None
            return
        if len(self.data) < 4:
            raise CorruptStreamError("payload shorter than the coder state")
        self.x = int.from_bytes(self.data[:4], "big")
        self.pos = 4

    def _pop(self, cdf_row: np.ndarray, freq_row: np.ndarray) -> int:
        if self.x is None:
            raise CorruptStreamError("payload exhausted")
        slot = self.x & (PROB_SCALE - 1)
        s = int(np.searchsorted(cdf_row, slot, side="right")) - 1
        freq = int(freq_row[s])
        if freq == 0:
            raise CorruptStreamError("decoded an impossible symbol")
        self.x = freq * (self.x >> PROB_BITS) + slot - int(cdf_row[s])
        while self.x < RANS_L:
            if self.pos >= len(self.data):
                raise CorruptStreamError("payload truncated")
            self.x = (self.x << 8) | self.data[self.pos]
            self.pos += 1
        return s

    def _bit(self) -> int:
        return self._pop(_BIT_CDF, _BIT_FREQ)

    def decode(self, table: PMFTable) -> np.ndarray:
        n = len(table)
        out = np.empty(n, dtype=np.int64)
        esc = table.escape_column
        for i in range(n):
            c = self._pop(table.cdf[i], table.freq[i])
            if c != esc:
                out[i] = table.offset[i] + c
                continue
            sign = self._bit()
            zeros = 0
            while self._bit() == 0:
                zeros += 1
                if zeros > 62:
                    raise CorruptStreamError("escape magnitude overflow")
            mag = 1
            for _ in range(zeros):
                mag = (mag << 1) | self._bit()
            out[i] = table.lo[i] - mag if sign else table.hi[i] + mag
        return out

    def finish(self) -> None:
        """Desync sentinel: the state must return to its initial value with every byte consumed."""
        if self.x is None:
            return
        if self.x != RANS_L or self.pos != len(self.data):
            raise CorruptStreamError("payload desynchronised (sentinel mismatch)")


_BIT_FREQ = np.array([HALF, HALF], dtype=np.int64)
_BIT_CDF = np.array([0, HALF, PROB_SCALE], dtype=np.int64)


def range_code(symbols, table: PMFTable) -> bytes:
    enc = RansEncoder()
    enc.encode(symbols, table)
    return enc.finish()


def range_decode(data: bytes, table: PMFTable) -> np.ndarray:
    dec = RansDecoder(data)
    out = dec.decode(table)
    dec.finish()
    return out
