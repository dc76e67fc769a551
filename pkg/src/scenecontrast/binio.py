"""Little helpers for reading binary files with byte-offset accounting.

Both container formats in this package (scene files and checkpoints) want
errors that name the failing section and the byte offset, so reads go
through a cursor object that tracks position and raises through a
caller-supplied exception factory.
"""

from __future__ import annotations

import struct
from typing import Callable

import numpy as np


class ByteCursor:
    """Sequential reader over a bytes object with offset-aware errors.

    ``fail`` is called as fail(message, offset) and must return the
    exception to raise; this lets scene and checkpoint readers share the
    cursor while raising their own error types.
    """

    def __init__(self, data: bytes, fail: Callable[[str, int], Exception]):
        self.data = data
        self.pos = 0
        self.fail = fail

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.data):
            raise self.fail(
                f"truncated while reading {what}: need {n} bytes, have "
                f"{len(self.data) - self.pos}",
                self.pos,
            )
        chunk = self.data[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def u32(self, what: str) -> int:
        return struct.unpack("<I", self.take(4, what))[0]

    def array(self, dtype: str, count: int, what: str) -> np.ndarray:
        dt = np.dtype(dtype).newbyteorder("<")
        raw = self.take(dt.itemsize * count, what)
        return np.frombuffer(raw, dtype=dt).astype(np.dtype(dtype), copy=True)

    def expect_end(self, what: str) -> None:
        if self.pos != len(self.data):
            raise self.fail(
                f"{len(self.data) - self.pos} trailing bytes after {what}",
                self.pos,
            )


def pack_u32(*values: int) -> bytes:
    return struct.pack(f"<{len(values)}I", *values)


def pack_array(arr: np.ndarray, dtype: str) -> bytes:
    return np.ascontiguousarray(arr, dtype=np.dtype(dtype).newbyteorder("<")).tobytes()
