"""The ``.hvb`` container.

Layout, all integers little-endian::

    b"HVFB"  u16 version  u32 width  u32 height  u32 gop  u32 model_tag  u32 frame_count
    per frame:  u8 type (0=I, 1=cI, 2=P)  u8 payload_count
                per payload: u32 length, payload bytes

I and cI frames carry ``[hyper, latent]`` payloads.  P frames carry
``[motion, residual]`` payloads, each one rANS stream holding the hyper
symbols followed by the latent symbols.  ``width``/``height`` are the
pre-padding frame size.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

MAGIC = b"HVFB"
VERSION = 1
FRAME_TYPES = ("I", "cI", "P")
_HEADER = struct.Struct("<4sHIIIII")
_FRAME = struct.Struct("<BB")
_LEN = struct.Struct("<I")


class ContainerError(ValueError):
    pass


@dataclass
class BitstreamContainer:
    width: int
    height: int
    gop: int
    frame_types: list[str] = field(default_factory=list)
    payloads: list[list[bytes]] = field(default_factory=list)
    model_tag: int = 0
    version: int = VERSION

    @property
    def frame_count(self) -> int:
        return len(self.frame_types)

    def payload_bytes(self) -> int:
        return sum(len(p) for frame in self.payloads for p in frame)

    def num_payloads(self) -> int:
        return sum(len(frame) for frame in self.payloads)

    def serialize(self) -> bytes:
        if len(self.frame_types) != len(self.payloads):
            raise ContainerError("frame_types and payloads differ in length")
        out = [_HEADER.pack(MAGIC, self.version, self.width, self.height, self.gop,
                            self.model_tag & 0xFFFFFFFF, self.frame_count)]
        for kind, payloads in zip(self.frame_types, self.payloads):
            out.append(_FRAME.pack(FRAME_TYPES.index(kind), len(payloads)))
            for p in payloads:
                out.append(_LEN.pack(len(p)))
                out.append(bytes(p))
        return b"".join(out)

    @classmethod
    def parse(cls, data: bytes) -> "BitstreamContainer":
        data = bytes(data)
        if len(data) < _HEADER.size:
            raise ContainerError("truncated header")
        magic, version, width, height, gop, tag, count = _HEADER.unpack_from(data, 0)
        if magic != MAGIC:
            raise ContainerError(f"bad magic {magic!r}")
        if version != VERSION:
            raise ContainerError(f"unsupported container version {version}")
        pos = _HEADER.size
        types, payloads = [], []
        for _ in range(count):
            if pos + _FRAME.size > len(data):
                raise ContainerError("truncated frame record")
            code, n = _FRAME.unpack_from(data, pos)
            pos += _FRAME.size
            if code >= len(FRAME_TYPES):
                raise ContainerError(f"unknown frame type {code}")
            frame = []
            for _ in range(n):
                if pos + _LEN.size > len(data):
                    raise ContainerError("truncated payload length")
                (length,) = _LEN.unpack_from(data, pos)
                pos += _LEN.size
                if pos + length > len(data):
                    raise ContainerError("payload length exceeds stream")
                frame.append(data[pos : pos + length])
                pos += length
            types.append(FRAME_TYPES[code])
            payloads.append(frame)
        if pos != len(data):
            raise ContainerError("trailing bytes after last frame")
        return cls(width, height, gop, types, payloads, tag, version)
