"""Little-endian binary helpers shared by every artifact format."""

import os
import struct

import numpy as np

from .errors import FormatError

U8 = struct.Struct("<B")
U32 = struct.Struct("<I")
U64 = struct.Struct("<Q")


class Reader:
    """Cursor over a byte buffer that raises :class:`FormatError` on underrun."""

    def __init__(self, data, path=None):
        self.data = data
        self.pos = 0
        self.path = path

    def fail(self, message, offset=None):
        raise FormatError(message, self.pos if offset is None else offset, self.path)

    def take(self, n, what):
        if self.pos + n > len(self.data):
            self.fail(f"truncated file while reading {what}: need {n} bytes, "
                      f"{len(self.data) - self.pos} left")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def magic(self, expected):
        got = self.take(len(expected), "magic")
        if got != expected:
            self.fail(f"bad magic {got!r}, expected {expected!r}", 0)

    def version(self, expected=1):
        start = self.pos
        v = self.u32("version")
        if v != expected:
            self.fail(f"unsupported version {v}", start)
        return v

    def u8(self, what):
        return U8.unpack(self.take(1, what))[0]

    def u32(self, what):
        return U32.unpack(self.take(4, what))[0]

    def u64(self, what):
        return U64.unpack(self.take(8, what))[0]

    def array(self, dtype, count, what):
        dt = np.dtype(dtype)
        raw = self.take(dt.itemsize * count, what)
        return np.frombuffer(raw, dtype=dt, count=count).copy()

    def finish(self):
        if self.pos != len(self.data):
            self.fail(f"{len(self.data) - self.pos} trailing bytes")


def read_file(path):
    with open(path, "rb") as fh:
        return Reader(fh.read(), path=str(path))


def f64le(a):
    return np.ascontiguousarray(a, dtype="<f8").tobytes()


def write_atomic(path, payload):
    """Write via a temp file and rename so a failed stage never leaves a partial file."""
    path = os.fspath(path)
    tmp = f"{path}.tmp{os.getpid()}"
    with open(tmp, "wb") as fh:
        fh.write(payload)
    os.replace(tmp, path)
