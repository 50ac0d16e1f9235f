"""Binary checkpoint container shared by the language model and the full model.

Layout (all integers little-endian u32 unless noted):

    magic   "SELMCKPT" (8 bytes)
    version u32 (currently 1)
    clen    u32, followed by clen bytes of canonical JSON (sorted keys) --
            carries the "kind" tag plus the model configuration
    count   u32 number of tensor records, lexicographically ordered by name:
        nlen u32, name bytes (utf-8)
        frozen u8 (0/1)
        rank u32, then rank dims (u32 each)
        payload: product(dims) float32 little-endian values, row-major

Round-trips are bit-exact: load(save(x)) == x at the byte level.
"""

from __future__ import annotations

import hashlib
import json
import struct

import numpy as np

from .errors import FormatError
from .params import ParameterTree

MAGIC = b"SELMCKPT"
VERSION = 1


def _canonical_json(obj):
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode("utf-8")


def save_checkpoint(path, config, tree: ParameterTree):
    """Write the tree (with frozen flags) plus a JSON config blob."""
    blob = bytearray()
    blob += MAGIC
    blob += struct.pack("<I", VERSION)
    cfg = _canonical_json(config)
    blob += struct.pack("<I", len(cfg))
    blob += cfg
    names = tree.names()
    blob += struct.pack("<I", len(names))
    for name in names:
        entry_name = name.encode("utf-8")
        data = tree.tensor(name).data.astype("<f4")
        blob += struct.pack("<I", len(entry_name))
        blob += entry_name
        blob += struct.pack("<B", 1 if tree.is_frozen(name) else 0)
        blob += struct.pack("<I", data.ndim)
        blob += struct.pack(f"<{data.ndim}I", *data.shape)
        blob += data.tobytes()
    with open(path, "wb") as f:
        f.write(bytes(blob))


class _Reader:
    def __init__(self, buf):
        self.buf = buf
        self.off = 0

    def take(self, n, what):
        if self.off + n > len(self.buf):
            raise FormatError(
                f"checkpoint truncated at byte {self.off} while reading {what}"
            )
        out = self.buf[self.off:self.off + n]
        self.off += n
        return out

    def u32(self, what):
        return struct.unpack("<I", self.take(4, what))[0]

    def u8(self, what):
        return self.take(1, what)[0]


def load_checkpoint(path):
    """Returns (config dict, arrays name->float32 ndarray, frozen name->bool)."""
    with open(path, "rb") as f:
        buf = f.read()
    r = _Reader(buf)
    magic = r.take(len(MAGIC), "magic")
    if magic != MAGIC:
        raise FormatError(f"bad checkpoint magic {magic!r} at byte 0")
    version = r.u32("version")
    if version != VERSION:
        raise FormatError(f"unsupported checkpoint version {version}")
    clen = r.u32("config length")
    try:
        config = json.loads(r.take(clen, "config").decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise FormatError(f"unreadable checkpoint config blob: {e}") from e
    count = r.u32("tensor count")
    arrays = {}
    frozen = {}
    prev_name = None
    for _ in range(count):
        nlen = r.u32("name length")
        name = r.take(nlen, "name").decode("utf-8")
        if prev_name is not None and name <= prev_name:
            raise FormatError(f"tensor names out of order at {name!r}")
        prev_name = name
        frozen[name] = bool(r.u8("frozen flag"))
        rank = r.u32("rank")
        dims = struct.unpack(f"<{rank}I", r.take(4 * rank, "dims"))
        size = int(np.prod(dims, dtype=np.int64)) if rank else 1
        payload = r.take(4 * size, f"payload of {name!r}")
        arrays[name] = np.frombuffer(payload, dtype="<f4").reshape(dims).copy()
    if r.off != len(buf):
        raise FormatError(f"{len(buf) - r.off} trailing bytes after byte {r.off}")
    return config, arrays, frozen


def file_sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()
