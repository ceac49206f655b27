"""Binary file helpers shared by the checkpoint and embedding formats.

All integers are little-endian u32, all floats little-endian f64, and
strings are u32-length-prefixed UTF-8.  Readers track the byte offset so
truncation and corruption surface as :class:`FormatError` with a
position instead of crashing.
"""

import struct

import numpy as np

from .errors import FormatError


class Reader:
    def __init__(self, f):
        self.f = f
        self.offset = 0

    def bytes(self, n, what):
        start = self.offset
        b = self.f.read(n)
        if len(b) != n:
            raise FormatError(f"truncated file while reading {what}", offset=start)
        self.offset += n
        return b

    def magic(self, expected):
        start = self.offset
        got = self.bytes(len(expected), "magic string")
        if got != expected:
            raise FormatError(
                f"bad magic: expected {expected!r}, got {got!r}", offset=start
            )

    def u32(self, what):
        return struct.unpack("<I", self.bytes(4, what))[0]

    def f64(self, what):
        return struct.unpack("<d", self.bytes(8, what))[0]

    def f64s(self, count, what):
        raw = self.bytes(8 * count, what)
        return np.frombuffer(raw, dtype="<f8").astype(np.float64)

    def string(self, what):
        start = self.offset
        n = self.u32(f"length of {what}")
        try:
            return self.bytes(n, what).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise FormatError(f"invalid UTF-8 in {what}: {exc}", offset=start) from exc

    def expect_eof(self):
        if self.f.read(1):
            raise FormatError("trailing bytes after end of data", offset=self.offset)


def write_u32(f, x):
    f.write(struct.pack("<I", x))


def write_f64(f, x):
    f.write(struct.pack("<d", x))


def write_f64s(f, arr):
    f.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def write_string(f, s):
    b = s.encode("utf-8")
    write_u32(f, len(b))
    f.write(b)
