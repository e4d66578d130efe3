"""Binary checkpoint files.

Layout (all integers unsigned 64-bit little-endian)::

    b"ROISGAN1"
    count, then ``count`` parameter records
    count, then ``count`` optimizer/trainer-state records
    epoch (float64 LE), best validation Dice (float64 LE)

A record is ``len(name)``, the UTF-8 name, the rank, one extent per axis and
the values as float32 little-endian in C order.
"""
from __future__ import annotations

import os
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MAGIC = b"ROISGAN1"
_U64 = struct.Struct("<Q")
_F64 = struct.Struct("<d")
_F32 = np.dtype("<f4")
MAX_RANK = 8


class CheckpointError(IOError):
    """Unreadable or inconsistent checkpoint file."""


@dataclass
class CheckpointData:
    params: dict[str, np.ndarray] = field(default_factory=dict)
    state: dict[str, np.ndarray] = field(default_factory=dict)
    epoch: float = 0.0
    best_dice: float = 0.0

    def group(self, prefix: str, section: str = "params") -> dict[str, np.ndarray]:
        """Records under ``prefix/`` with the prefix stripped."""
        src = self.params if section == "params" else self.state
        p = prefix.rstrip("/") + "/"
        return {k[len(p):]: v for k, v in src.items() if k.startswith(p)}


def _encode_records(records: dict[str, np.ndarray]) -> bytes:
    parts = [_U64.pack(len(records))]
    for name, arr in records.items():
        arr = np.asarray(arr)
        data = arr.astype(_F32)
        if arr.dtype != _F32 and not np.array_equal(data.astype(arr.dtype), arr):
            raise CheckpointError(f"record {name!r} is not exactly representable as float32")
        raw = name.encode("utf-8")
        parts.append(_U64.pack(len(raw)))
        parts.append(raw)
        parts.append(_U64.pack(data.ndim))
        parts.extend(_U64.pack(d) for d in data.shape)
        parts.append(np.ascontiguousarray(data).tobytes())
    return b"".join(parts)


def encode(params: dict[str, np.ndarray], state: dict[str, np.ndarray], epoch: float, best_dice: float) -> bytes:
    return (MAGIC + _encode_records(params) + _encode_records(state)
            + _F64.pack(float(epoch)) + _F64.pack(float(best_dice)))


class _Reader:
    def __init__(self, buf: bytes, source: str):
        self.buf = buf
        self.pos = 0
        self.source = source

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.buf):
            raise CheckpointError(f"{self.source}: truncated while reading {what} at byte {self.pos}")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def u64(self, what: str) -> int:
        return _U64.unpack(self.take(8, what))[0]

    def records(self, section: str) -> dict[str, np.ndarray]:
        count = self.u64(f"{section} record count")
        out = {}
        for i in range(count):
            n = self.u64(f"{section} record {i} name length")
            if n > 4096:
                raise CheckpointError(f"{self.source}: implausible name length {n} in {section} record {i}")
            try:
                name = self.take(n, "record name").decode("utf-8")
            except UnicodeDecodeError:
                raise CheckpointError(f"{self.source}: record name is not UTF-8") from None
            rank = self.u64(f"rank of {name!r}")
            if rank > MAX_RANK:
                raise CheckpointError(f"{self.source}: implausible rank {rank} for {name!r}")
            shape = tuple(self.u64(f"extent of {name!r}") for _ in range(rank))
            size = int(np.prod(shape, dtype=np.int64)) if shape else 1
            raw = self.take(4 * size, f"values of {name!r}")
            if name in out:
                raise CheckpointError(f"{self.source}: duplicate record {name!r}")
            out[name] = np.frombuffer(raw, dtype=_F32).astype(np.float32).reshape(shape)
        return out


def decode(buf: bytes, source: str = "<bytes>") -> CheckpointData:
    if buf[:len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{source}: bad magic {buf[:len(MAGIC)]!r}, expected {MAGIC!r}")
    r = _Reader(buf, source)
    r.pos = len(MAGIC)
    params = r.records("parameter")
    state = r.records("state")
    epoch = _F64.unpack(r.take(8, "epoch footer"))[0]
    best = _F64.unpack(r.take(8, "best-Dice footer"))[0]
    if r.pos != len(buf):
        raise CheckpointError(f"{source}: {len(buf) - r.pos} trailing bytes after footer")
    return CheckpointData(params, state, epoch, best)


def save_checkpoint(path, params: dict[str, np.ndarray], state: dict[str, np.ndarray],
                    epoch: float, best_dice: float) -> None:
    """Write atomically: a temporary file is renamed over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(encode(params, state, epoch, best_dice))
    os.replace(tmp, path)


def load_checkpoint(path) -> CheckpointData:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    return decode(path.read_bytes(), str(path))
