"""Loadable program image and its binary file format.

Layout (little-endian)::

    "PULP"            magic
    u16  version      = 1
    u32  entry
    u32  primary_start
    u32  primary_end
    u16  segment_count
    segment_count x { u32 base, u32 len, len bytes }
    optional symbol section:
        "SYMS", u32 count, count x { u16 name_len, name (utf-8), u32 addr }
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

MAGIC = b"PULP"
SYM_MAGIC = b"SYMS"
VERSION = 1
_HEADER = struct.Struct("<4sHIIIH")


class ImageError(ValueError):
    pass


class OverlappingSegments(ImageError):
    pass


class ImageTooLarge(ImageError):
    pass


class ImageFormatError(ImageError):
    pass


@dataclass
class ProgramImage:
    entry: int
    primary_start: int
    primary_end: int
    segments: list[tuple[int, bytes]]
    symbols: dict[str, int] = field(default_factory=dict)

    def validate(self, mem_size: int | None = None) -> None:
        if not self.primary_start < self.primary_end:
            raise ImageError(f"empty primary range [{self.primary_start:#x}, {self.primary_end:#x})")
        if self.primary_start % 4 or self.primary_end % 4:
            raise ImageError("primary range bounds must be 4-byte aligned")
        spans = sorted((base, base + len(data)) for base, data in self.segments if data)
        for (_, end_a), (base_b, _) in zip(spans, spans[1:]):
            if base_b < end_a:
                raise OverlappingSegments(f"segment at {base_b:#x} overlaps previous segment")
        if mem_size is not None:
            for base, end in spans:
                if end > mem_size:
                    raise ImageTooLarge(f"segment [{base:#x}, {end:#x}) exceeds memory size {mem_size:#x}")
        if self.segments and not any(base <= self.entry < base + len(data)
                                     for base, data in self.segments):
            raise ImageError(f"entry {self.entry:#x} outside all segments")

    def to_bytes(self) -> bytes:
        out = bytearray(_HEADER.pack(MAGIC, VERSION, self.entry, self.primary_start,
                                     self.primary_end, len(self.segments)))
        for base, data in self.segments:
            out += struct.pack("<II", base, len(data))
            out += data
        if self.symbols:
            out += SYM_MAGIC + struct.pack("<I", len(self.symbols))
            for name in sorted(self.symbols):
                raw = name.encode("utf-8")
                out += struct.pack("<H", len(raw)) + raw + struct.pack("<I", self.symbols[name] & 0xFFFFFFFF)
        return bytes(out)

    @classmethod
    def from_bytes(cls, blob: bytes) -> ProgramImage:
        try:
            magic, version, entry, pstart, pend, nseg = _HEADER.unpack_from(blob, 0)
        except struct.error as e:
            raise ImageFormatError("truncated header") from e
        if magic != MAGIC:
            raise ImageFormatError(f"bad magic {magic!r}")
        if version != VERSION:
            raise ImageFormatError(f"unsupported version {version}")
        pos = _HEADER.size
        segments = []
        try:
            for _ in range(nseg):
                base, length = struct.unpack_from("<II", blob, pos)
                pos += 8
                data = blob[pos:pos + length]
                if len(data) != length:
                    raise ImageFormatError("truncated segment")
                segments.append((base, bytes(data)))
                pos += length
            symbols = {}
            if pos < len(blob):
                if blob[pos:pos + 4] != SYM_MAGIC:
                    raise ImageFormatError("trailing bytes are not a symbol section")
                (count,) = struct.unpack_from("<I", blob, pos + 4)
                pos += 8
                for _ in range(count):
                    (n,) = struct.unpack_from("<H", blob, pos)
                    name = blob[pos + 2:pos + 2 + n].decode("utf-8")
                    (addr,) = struct.unpack_from("<I", blob, pos + 2 + n)
                    symbols[name] = addr
                    pos += 6 + n
        except struct.error as e:
            raise ImageFormatError("truncated image") from e
        return cls(entry, pstart, pend, segments, symbols)

    def save(self, path: str | Path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path: str | Path) -> ProgramImage:
        return cls.from_bytes(Path(path).read_bytes())
