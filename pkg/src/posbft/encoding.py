"""Canonical binary encoding.

Fields are written in declaration order. Integers are fixed-width big-endian,
variable-length byte strings and lists carry a u32 length prefix, hashes are
written raw. Every signed or hashed structure in the package goes through
these helpers so that byte output is reproducible across runs.
"""

from __future__ import annotations

import hashlib
import struct
from typing import Callable, Iterable, TypeVar

T = TypeVar("T")

HASH_LEN = 32
ZERO_HASH = bytes(HASH_LEN)


class DecodeError(ValueError):
    pass


def sha256(data: bytes) -> bytes:
    return hashlib.sha256(data).digest()


class Writer:
    __slots__ = ("_parts",)

    def __init__(self) -> None:
        self._parts: list[bytes] = []

    def u8(self, v: int) -> "Writer":
        self._parts.append(struct.pack(">B", v))
        return self

    def u32(self, v: int) -> "Writer":
        self._parts.append(struct.pack(">I", v))
        return self

    def u64(self, v: int) -> "Writer":
        self._parts.append(struct.pack(">Q", v))
        return self

    def flag(self, v: bool) -> "Writer":
        return self.u8(1 if v else 0)

    def raw(self, data: bytes, length: int | None = None) -> "Writer":
        if length is not None and len(data) != length:
            raise ValueError(f"expected {length} bytes, got {len(data)}")
        self._parts.append(bytes(data))
        return self

    def hash(self, data: bytes) -> "Writer":
        return self.raw(data, HASH_LEN)

    def blob(self, data: bytes) -> "Writer":
        self.u32(len(data))
        self._parts.append(bytes(data))
        return self

    def text(self, s: str) -> "Writer":
        return self.blob(s.encode("utf-8"))

    def seq(self, items: Iterable[T], write_item: Callable[["Writer", T], object]) -> "Writer":
        items = list(items)
        self.u32(len(items))
        for item in items:
            write_item(self, item)
        return self

    def optional(self, item: T | None, write_item: Callable[["Writer", T], object]) -> "Writer":
        if item is None:
            return self.u8(0)
        self.u8(1)
        write_item(self, item)
        return self

    def getvalue(self) -> bytes:
        return b"".join(self._parts)


class Reader:
    __slots__ = ("_buf", "_pos")

    def __init__(self, data: bytes) -> None:
        self._buf = memoryview(data)
        self._pos = 0

    def _take(self, n: int) -> bytes:
        end = self._pos + n
        if n < 0 or end > len(self._buf):
            raise DecodeError("truncated input")
        chunk = self._buf[self._pos:end].tobytes()
        self._pos = end
        return chunk

    def u8(self) -> int:
        return self._take(1)[0]

    def u32(self) -> int:
        return struct.unpack(">I", self._take(4))[0]

    def u64(self) -> int:
        return struct.unpack(">Q", self._take(8))[0]

    def flag(self) -> bool:
        v = self.u8()
        if v > 1:
            raise DecodeError(f"bad boolean byte {v}")
        return v == 1

    def raw(self, n: int) -> bytes:
        return self._take(n)

    def hash(self) -> bytes:
        return self._take(HASH_LEN)

    def blob(self) -> bytes:
        return self._take(self.u32())

    def text(self) -> str:
        return self.blob().decode("utf-8")

    def seq(self, read_item: Callable[["Reader"], T]) -> list[T]:
        count = self.u32()
        if count > len(self._buf) - self._pos:
            # every item costs at least one byte
            raise DecodeError("list length exceeds input")
        return [read_item(self) for _ in range(count)]

    def optional(self, read_item: Callable[["Reader"], T]) -> T | None:
        tag = self.u8()
        if tag == 0:
            return None
        if tag != 1:
            raise DecodeError(f"bad optional tag {tag}")
        return read_item(self)

    @property
    def remaining(self) -> int:
        return len(self._buf) - self._pos

    def expect_end(self) -> None:
        if self.remaining:
            raise DecodeError(f"{self.remaining} trailing bytes")


def tagged(tag: str, *ints: int) -> bytes:
    """Encode a domain tag followed by u64 integers, e.g. ``<VIEW-CHANGE, i, b>``."""
    w = Writer().text(tag)
    for v in ints:
        w.u64(v)
    return w.getvalue()
