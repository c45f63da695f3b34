"""Bit-exact binary checkpoints.

Layout (all integers little-endian)::

    b"MVGPTCK1" | u32 version
    u64 len | config text (UTF-8)
    u32 count | count x tensor record
    u64 optimizer step | u32 count | count x (m record, v record)
    u64 len | RNG state JSON (empty when absent)

A tensor record is ``u32 len | name | u32 rank | rank x u64 dim | float64 data``.
"""
from __future__ import annotations

import json
import os
import struct
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MAGIC = b"MVGPTCK1"
VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    config_text: str
    tensors: dict[str, np.ndarray]
    opt_step: int = 0
    opt_m: dict[str, np.ndarray] = field(default_factory=dict)
    opt_v: dict[str, np.ndarray] = field(default_factory=dict)
    rng_state: dict | None = None


def _tensor_record(name: str, arr: np.ndarray) -> bytes:
    raw = name.encode("utf-8")
    arr = np.ascontiguousarray(arr, dtype="<f8")
    head = struct.pack("<I", len(raw)) + raw + struct.pack("<I", arr.ndim)
    head += struct.pack(f"<{arr.ndim}Q", *arr.shape)
    return head + arr.tobytes()


def to_bytes(ck: Checkpoint) -> bytes:
    parts = [MAGIC, struct.pack("<I", VERSION)]
    cfg = ck.config_text.encode("utf-8")
    parts += [struct.pack("<Q", len(cfg)), cfg, struct.pack("<I", len(ck.tensors))]
    parts += [_tensor_record(k, v) for k, v in ck.tensors.items()]
    parts += [struct.pack("<Q", ck.opt_step), struct.pack("<I", len(ck.opt_m))]
    for k in ck.opt_m:
        parts += [_tensor_record(k, ck.opt_m[k]), _tensor_record(k, ck.opt_v[k])]
    rng = b"" if ck.rng_state is None else json.dumps(ck.rng_state, sort_keys=True).encode("utf-8")
    parts += [struct.pack("<Q", len(rng)), rng]
    return b"".join(parts)


class _Reader:
    def __init__(self, buf: bytes):
        self.buf, self.pos = buf, 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise CheckpointError(f"truncated checkpoint: need {n} bytes at offset {self.pos}")
        out = self.buf[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def tensor(self) -> tuple[str, np.ndarray]:
        (n,) = self.unpack("<I")
        name = self.take(n).decode("utf-8")
        (rank,) = self.unpack("<I")
        shape = self.unpack(f"<{rank}Q") if rank else ()
        count = int(np.prod(shape)) if rank else 1
        data = np.frombuffer(self.take(8 * count), dtype="<f8").astype(np.float64)
        return name, data.reshape(shape)


def from_bytes(buf: bytes) -> Checkpoint:
    r = _Reader(buf)
    if r.take(len(MAGIC)) != MAGIC:
        raise CheckpointError("not a checkpoint: bad magic bytes")
    (version,) = r.unpack("<I")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    (n,) = r.unpack("<Q")
    config_text = r.take(n).decode("utf-8")
    (count,) = r.unpack("<I")
    tensors = dict(r.tensor() for _ in range(count))
    step, count = r.unpack("<Q")[0], r.unpack("<I")[0]
    m, v = {}, {}
    for _ in range(count):
        k, a = r.tensor()
        k2, b = r.tensor()
        if k != k2:
            raise CheckpointError(f"optimizer record mismatch {k!r} / {k2!r}")
        m[k], v[k] = a, b
    (n,) = r.unpack("<Q")
    rng = json.loads(r.take(n).decode("utf-8")) if n else None
    if r.pos != len(buf):
        raise CheckpointError(f"{len(buf) - r.pos} trailing bytes after checkpoint")
    return Checkpoint(config_text, tensors, step, m, v, rng)


def save_checkpoint(path: str | Path, ck: Checkpoint) -> None:
    """Write atomically: temp file in the target directory, then rename."""
    path = Path(path)
    data = to_bytes(ck)
    fd, tmp = tempfile.mkstemp(dir=path.parent or ".", prefix=path.name + ".", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_checkpoint(path: str | Path) -> Checkpoint:
    try:
        buf = Path(path).read_bytes()
    except OSError as exc:
        raise OSError(f"cannot read checkpoint {path}: {exc}") from exc
    return from_bytes(buf)
