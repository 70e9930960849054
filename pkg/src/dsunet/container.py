"""Binary container for named float32 tensors.

Little-endian layout: 4-byte magic ("DSUF" for feature files, "DSUT" for
checkpoints), u32 version = 1, u32 tensor count, then per tensor:
u32 name length, UTF-8 name, u32 ndim, ndim x u64 dims, row-major
float32 payload.
"""

from __future__ import annotations

import struct

import numpy as np

MAGIC_FEATURES = b"DSUF"
MAGIC_CHECKPOINT = b"DSUT"
VERSION = 1


class ContainerError(ValueError):
    """Base class for container format failures."""


class BadMagicError(ContainerError):
    pass


class BadVersionError(ContainerError):
    pass


class TruncatedError(ContainerError):
    pass


def write_container(path, tensors, magic=MAGIC_FEATURES):
    """Write name -> float array mapping; values must be finite."""
    chunks = [magic, struct.pack("<II", VERSION, len(tensors))]
    for name, arr in tensors.items():
        arr = np.asarray(arr, dtype=np.float32)
        if not np.all(np.isfinite(arr)):
            raise ValueError(f"tensor {name!r} contains non-finite values")
        nameb = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(nameb)))
        chunks.append(nameb)
        chunks.append(struct.pack("<I", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        chunks.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    with open(path, "wb") as f:
        f.write(b"".join(chunks))


class _Reader:
    def __init__(self, data):
        self.data = data
        self.pos = 0

    def take(self, n, what):
        if self.pos + n > len(self.data):
            raise TruncatedError(f"truncated payload while reading {what}")
        chunk = self.data[self.pos : self.pos + n]
        self.pos += n
        return chunk


def read_container(path, magic=MAGIC_FEATURES):
    """Read a container back into a name -> float32 array dict."""
    with open(path, "rb") as f:
        data = f.read()
    r = _Reader(data)
    got = r.take(4, "magic")
    if got != magic:
        raise BadMagicError(f"bad magic {got!r}, expected {magic!r}")
    version, count = struct.unpack("<II", r.take(8, "header"))
    if version != VERSION:
        raise BadVersionError(f"unsupported version {version}")
    out = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<I", r.take(4, "name length"))
        name = r.take(name_len, "name").decode("utf-8")
        (ndim,) = struct.unpack("<I", r.take(4, "ndim"))
        dims = struct.unpack(f"<{ndim}Q", r.take(8 * ndim, "dims"))
        n = 1
        for d in dims:
            n *= d
        payload = r.take(4 * n, f"payload of {name!r}")
        out[name] = np.frombuffer(payload, dtype="<f4").reshape(dims).astype(np.float32)
    return out
