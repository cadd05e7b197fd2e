"""Binary checkpoint serialization.

Layout, all integers little-endian u32:

* 8 ASCII magic bytes ``CATPOL01``;
* tensor count, then per tensor: name length, UTF-8 name, rows, cols, and
  rows * cols float64 values (little-endian);
* config-echo length and UTF-8 config text (the flat key = value form of the
  run that produced the checkpoint);
* exactly 32 bytes of RNG state (the PCG64 state/increment pair of the
  run's checkpoint stream).

Reads validate the magic, reject duplicate tensor names, and report which
tensor a truncated file died in.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

MAGIC = b"CATPOL01"
RNG_STATE_BYTES = 32


class CheckpointError(Exception):
    """Unreadable or malformed checkpoint; maps to exit code 2 in the CLI."""


@dataclass
class Checkpoint:
    tensors: dict[str, np.ndarray]   # insertion order is the file order
    config_text: str
    rng_state: bytes

    def __post_init__(self):
        if len(self.rng_state) != RNG_STATE_BYTES:
            raise CheckpointError(f"rng state must be {RNG_STATE_BYTES} bytes, got {len(self.rng_state)}")
        for name, arr in self.tensors.items():
            if arr.ndim != 2:
                raise CheckpointError(f"tensor {name!r} must be 2-D, got {arr.ndim}-D")


def save_checkpoint(path: str | Path, ckpt: Checkpoint) -> None:
    blob = bytearray()
    blob += MAGIC
    blob += struct.pack("<I", len(ckpt.tensors))
    for name, arr in ckpt.tensors.items():
        encoded = name.encode("utf-8")
        rows, cols = arr.shape
        blob += struct.pack("<I", len(encoded))
        blob += encoded
        blob += struct.pack("<II", rows, cols)
        blob += np.ascontiguousarray(arr, dtype="<f8").tobytes()
    config = ckpt.config_text.encode("utf-8")
    blob += struct.pack("<I", len(config))
    blob += config
    blob += ckpt.rng_state
    Path(path).write_bytes(bytes(blob))


class _Reader:
    def __init__(self, raw: bytes):
        self.raw = raw
        self.offset = 0

    def take(self, count: int, what: str) -> bytes:
        if self.offset + count > len(self.raw):
            raise CheckpointError(f"checkpoint truncated while reading {what}")
        chunk = self.raw[self.offset:self.offset + count]
        self.offset += count
        return chunk

    def u32(self, what: str) -> int:
        return struct.unpack("<I", self.take(4, what))[0]


def load_checkpoint(path: str | Path) -> Checkpoint:
    p = Path(path)
    if not p.is_file():
        raise CheckpointError(f"checkpoint file not found: {p}")
    reader = _Reader(p.read_bytes())
    magic = reader.take(len(MAGIC), "magic bytes")
    if magic != MAGIC:
        raise CheckpointError(f"bad magic bytes {magic!r}, expected {MAGIC!r}")
    count = reader.u32("tensor count")
    tensors: dict[str, np.ndarray] = {}
    for i in range(count):
        name_len = reader.u32(f"tensor {i} name length")
        name = reader.take(name_len, f"tensor {i} name").decode("utf-8")
        rows = reader.u32(f"tensor {name!r} rows")
        cols = reader.u32(f"tensor {name!r} cols")
        values = reader.take(rows * cols * 8, f"tensor {name!r} values")
        if name in tensors:
            raise CheckpointError(f"duplicate tensor name {name!r}")
        tensors[name] = np.frombuffer(values, dtype="<f8").reshape(rows, cols).copy()
    config_len = reader.u32("config length")
    config_text = reader.take(config_len, "config echo").decode("utf-8")
    rng_state = reader.take(RNG_STATE_BYTES, "rng state")
    if reader.offset != len(reader.raw):
        raise CheckpointError(f"{len(reader.raw) - reader.offset} trailing bytes after rng state")
    return Checkpoint(tensors, config_text, rng_state)
