"""Just enough MessagePack for code-object metadata documents.

The decoder is written for hostile input: every length is checked against the
bytes that remain before anything is allocated, nesting depth is capped, and
every failure is a :class:`CodeObjectError` carrying an absolute offset.
"""
from __future__ import annotations

import struct

from .errors import CodeObjectError

MAX_DEPTH = 32

_U = {0xCC: ("B", 1), 0xCD: (">H", 2), 0xCE: (">I", 4), 0xCF: (">Q", 8),
      0xD0: ("b", 1), 0xD1: (">h", 2), 0xD2: (">i", 4), 0xD3: (">q", 8),
      0xCA: (">f", 4), 0xCB: (">d", 8)}


class _Reader:
    __slots__ = ("data", "pos", "end", "base")

    def __init__(self, data: bytes, base: int):
        self.data = data
        self.pos = 0
        self.end = len(data)
        self.base = base

    def take(self, n: int) -> bytes:
        if n > self.end - self.pos:
            raise CodeObjectError(f"metadata truncated: need {n} bytes", self.base + self.end)
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def uint(self, n: int) -> int:
        return int.from_bytes(self.take(n), "big")

    def fail(self, msg: str, at: int) -> CodeObjectError:
        return CodeObjectError(msg, self.base + at)


def unpackb(data: bytes, base_offset: int = 0):
    r = _Reader(bytes(data), base_offset)
    obj = _decode(r, 0)
    if r.pos != r.end:
        raise r.fail(f"{r.end - r.pos} trailing bytes after metadata document", r.pos)
    return obj


def _decode(r: _Reader, depth: int):
    if depth > MAX_DEPTH:
        raise r.fail("metadata nested too deeply", r.pos)
    at = r.pos
    b = r.take(1)[0]
    if b <= 0x7F:
        return b
    if b >= 0xE0:
        return b - 0x100
    if 0x80 <= b <= 0x8F:
        return _map(r, b & 0x0F, depth)
    if 0x90 <= b <= 0x9F:
        return _array(r, b & 0x0F, depth)
    if 0xA0 <= b <= 0xBF:
        return _str(r, b & 0x1F, at)
    if b == 0xC0:
        return None
    if b == 0xC2:
        return False
    if b == 0xC3:
        return True
    if b in _U:
        fmt, n = _U[b]
        return struct.unpack(fmt, r.take(n))[0]
    if b in (0xC4, 0xC5, 0xC6):
        return r.take(r.uint(1 << (b - 0xC4)))
    if b in (0xD9, 0xDA, 0xDB):
        return _str(r, r.uint(1 << (b - 0xD9)), at)
    if b in (0xDC, 0xDD):
        return _array(r, r.uint(2 if b == 0xDC else 4), depth)
    if b in (0xDE, 0xDF):
        return _map(r, r.uint(2 if b == 0xDE else 4), depth)
    raise r.fail(f"unsupported msgpack type byte {b:#04x}", at)


def _str(r: _Reader, n: int, at: int) -> str:
    try:
        return r.take(n).decode("utf-8")
    except UnicodeDecodeError:
        raise r.fail("metadata string is not valid UTF-8", at) from None


def _array(r: _Reader, n: int, depth: int) -> list:
    # Each element needs at least one byte; refuse counts the input cannot hold.
    if n > r.end - r.pos:
        raise CodeObjectError(f"metadata truncated: array of {n} elements", r.base + r.end)
    return [_decode(r, depth + 1) for _ in range(n)]


def _map(r: _Reader, n: int, depth: int) -> dict:
    if 2 * n > r.end - r.pos:
        raise CodeObjectError(f"metadata truncated: map of {n} entries", r.base + r.end)
    out = {}
    for _ in range(n):
        at = r.pos
        k = _decode(r, depth + 1)
        if not isinstance(k, (str, int, bool, type(None))):
            raise r.fail(f"unhashable metadata key of type {type(k).__name__}", at)
        out[k] = _decode(r, depth + 1)
    return out


def packb(obj) -> bytes:
    out = bytearray()
    _encode(obj, out)
    return bytes(out)


def _encode(obj, out: bytearray) -> None:
    if obj is None:
        out.append(0xC0)
    elif obj is True:
        out.append(0xC3)
    elif obj is False:
        out.append(0xC2)
    elif isinstance(obj, int):
        if 0 <= obj <= 0x7F:
            out.append(obj)
        elif -32 <= obj < 0:
            out.append(obj & 0xFF)
        elif 0 <= obj < 1 << 64:
            for tag, n in ((0xCC, 1), (0xCD, 2), (0xCE, 4), (0xCF, 8)):
                if obj < 1 << (8 * n):
                    out.append(tag)
                    out += obj.to_bytes(n, "big")
                    break
        elif -(1 << 63) <= obj < 0:
            out.append(0xD3)
            out += struct.pack(">q", obj)
        else:
            raise OverflowError(f"integer {obj} does not fit in 64 bits")
    elif isinstance(obj, float):
        out.append(0xCB)
        out += struct.pack(">d", obj)
    elif isinstance(obj, str):
        data = obj.encode("utf-8")
        n = len(data)
        if n < 32:
            out.append(0xA0 | n)
        elif n < 1 << 8:
            out += bytes((0xD9, n))
        elif n < 1 << 16:
            out.append(0xDA)
            out += n.to_bytes(2, "big")
        else:
            out.append(0xDB)
            out += n.to_bytes(4, "big")
        out += data
    elif isinstance(obj, (bytes, bytearray)):
        n = len(obj)
        if n < 1 << 8:
            out += bytes((0xC4, n))
        elif n < 1 << 16:
            out.append(0xC5)
            out += n.to_bytes(2, "big")
        else:
            out.append(0xC6)
            out += n.to_bytes(4, "big")
        out += obj
    elif isinstance(obj, (list, tuple)):
        n = len(obj)
        if n < 16:
            out.append(0x90 | n)
        elif n < 1 << 16:
            out.append(0xDC)
            out += n.to_bytes(2, "big")
        else:
            out.append(0xDD)
            out += n.to_bytes(4, "big")
        for item in obj:
            _encode(item, out)
    elif isinstance(obj, dict):
        n = len(obj)
        if n < 16:
            out.append(0x80 | n)
        elif n < 1 << 16:
            out.append(0xDE)
            out += n.to_bytes(2, "big")
        else:
            out.append(0xDF)
            out += n.to_bytes(4, "big")
        for k, v in obj.items():
            _encode(k, out)
            _encode(v, out)
    else:
        raise TypeError(f"cannot encode {type(obj).__name__}")
