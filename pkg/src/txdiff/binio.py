"""Shared helpers for the checksummed binary file formats."""

from __future__ import annotations

import io
import struct

from fastcrc import crc64


class VersionMismatch(ValueError):
    pass


class CorruptFile(ValueError):
    pass


def take(buf: io.BytesIO, n: int) -> bytes:
    data = buf.read(n)
    if len(data) != n:
        raise CorruptFile("unexpected end of file")
    return data


def unpack(buf: io.BytesIO, fmt: str) -> tuple:
    return struct.unpack(fmt, take(buf, struct.calcsize(fmt)))


def seal(body: bytes) -> bytes:
    """Append the little-endian CRC64/XZ of ``body``."""
    return body + struct.pack("<Q", crc64.xz(body))


def open_sealed(data: bytes, magic: bytes, version: int) -> io.BytesIO:
    """Check magic, version (before the checksum) and CRC; return a reader positioned after the version."""
    if len(data) < len(magic) + 12 or data[: len(magic)] != magic:
        raise CorruptFile(f"missing {magic.decode()} header")
    body, (crc,) = data[:-8], struct.unpack("<Q", data[-8:])
    buf = io.BytesIO(body)
    buf.read(len(magic))
    (found,) = unpack(buf, "<I")
    if found != version:
        raise VersionMismatch(f"file version {found}, reader supports {version}")
    if crc64.xz(body) != crc:
        raise CorruptFile("checksum mismatch")
    return buf


def expect_end(buf: io.BytesIO) -> None:
    if buf.read():
        raise CorruptFile("trailing bytes before checksum")
