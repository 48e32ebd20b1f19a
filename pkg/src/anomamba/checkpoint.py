"""Binary checkpoint serialization.

Little-endian layout:

    magic   "ALMR" (4 bytes)
    version u32
    config  u64 length + UTF-8 JSON
    count   u64
    entry*  u16 name length, name bytes, u8 dtype (0=f32, 1=f64),
            u8 ndim, u64 dims..., raw row-major values

Round-trip is byte-identical: entry order is preserved and the config blob
is serialized canonically (sorted keys, compact separators).
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import CheckpointFormatError

MAGIC = b"ALMR"
VERSION = 1
_DTYPES = {0: np.float32, 1: np.float64}
_CODES = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}


def _config_bytes(config: dict) -> bytes:
    return json.dumps(config, sort_keys=True, separators=(",", ":")).encode("utf-8")


def save_checkpoint(entries: dict[str, np.ndarray], config: dict, path) -> None:
    """Write named arrays plus a JSON config blob. Order is preserved."""
    out = bytearray()
    out += MAGIC
    out += struct.pack("<I", VERSION)
    blob = _config_bytes(config)
    out += struct.pack("<Q", len(blob))
    out += blob
    out += struct.pack("<Q", len(entries))
    for name, arr in entries.items():
        arr = np.ascontiguousarray(arr)
        if arr.dtype not in _CODES:
            raise ValueError(f"entry {name!r} has unsupported dtype {arr.dtype}")
        nb = name.encode("utf-8")
        if len(nb) > 0xFFFF:
            raise ValueError(f"entry name too long: {name[:40]}...")
        out += struct.pack("<H", len(nb))
        out += nb
        out += struct.pack("<BB", _CODES[arr.dtype], arr.ndim)
        for d in arr.shape:
            out += struct.pack("<Q", d)
        if arr.dtype.byteorder == ">":
            arr = arr.astype(arr.dtype.newbyteorder("<"))
        out += arr.tobytes()
    Path(path).write_bytes(bytes(out))


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.buf):
            raise CheckpointFormatError(self.pos, f"truncated while reading {what}")
        out = self.buf[self.pos : self.pos + n]
        self.pos += n
        return out

    def u(self, fmt: str, what: str) -> int:
        size = struct.calcsize(fmt)
        return struct.unpack(fmt, self.take(size, what))[0]


def load_checkpoint(path) -> tuple[dict, dict[str, np.ndarray]]:
    """Read a checkpoint back into (config, ordered entries)."""
    r = _Reader(Path(path).read_bytes())
    magic = r.take(4, "magic")
    if magic != MAGIC:
        raise CheckpointFormatError(0, f"bad magic {magic!r}, expected {MAGIC!r}")
    version = r.u("<I", "version")
    if version != VERSION:
        raise CheckpointFormatError(4, f"unsupported version {version}")
    blob_len = r.u("<Q", "config length")
    config = json.loads(r.take(blob_len, "config blob").decode("utf-8"))
    count = r.u("<Q", "entry count")
    entries: dict[str, np.ndarray] = {}
    for _ in range(count):
        name_len = r.u("<H", "name length")
        name = r.take(name_len, "name").decode("utf-8")
        code = r.u("<B", f"dtype of {name}")
        if code not in _DTYPES:
            raise CheckpointFormatError(r.pos - 1, f"unknown dtype code {code} for {name!r}")
        ndim = r.u("<B", f"ndim of {name}")
        dims = tuple(r.u("<Q", f"dim of {name}") for _ in range(ndim))
        dtype = np.dtype(_DTYPES[code]).newbyteorder("<")
        nbytes = int(np.prod(dims, dtype=np.int64)) * dtype.itemsize if dims else dtype.itemsize
        if ndim == 0:
            nbytes = dtype.itemsize
        raw = r.take(nbytes, f"data of {name}")
        entries[name] = np.frombuffer(raw, dtype=dtype).reshape(dims).astype(_DTYPES[code])
    if r.pos != len(r.buf):
        raise CheckpointFormatError(r.pos, f"{len(r.buf) - r.pos} trailing bytes")
    return config, entries


def store_entries(store) -> dict[str, np.ndarray]:
    """Flatten a ParamStore (params + Adam moments) into checkpoint entries."""
    out: dict[str, np.ndarray] = {}
    for name, t in store.params.items():
        out[name] = t.data
    for name, m in store.m.items():
        out[f"optim.m.{name}"] = m
    for name, v in store.v.items():
        out[f"optim.v.{name}"] = v
    return out


def load_into_store(store, entries: dict[str, np.ndarray], config: dict) -> None:
    for name, t in store.params.items():
        arr = entries.get(name)
        if arr is None:
            raise CheckpointFormatError(0, f"checkpoint lacks parameter {name!r}")
        if arr.shape != t.data.shape:
            raise CheckpointFormatError(
                0, f"parameter {name!r}: shape {arr.shape} vs expected {t.data.shape}"
            )
        t.data = arr.astype(t.data.dtype)
    for name, arr in entries.items():
        if name.startswith("optim.m."):
            store.m[name[len("optim.m.") :]] = arr.copy()
        elif name.startswith("optim.v."):
            store.v[name[len("optim.v.") :]] = arr.copy()
    store.step_count = int(config.get("step_count", 0))
