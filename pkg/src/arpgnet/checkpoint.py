"""Binary checkpoint format.

Layout (all integers unsigned 32-bit little-endian)::

    b"ARPG1"
    u32 config_length, config_length bytes of UTF-8 JSON (sorted keys)
    for each parameter, in ArpgNet.named_parameters() order:
        u32 name_length, name bytes (UTF-8)
        u32 rank, rank x u32 extents
        prod(extents) little-endian float32 values
"""

from __future__ import annotations

import json
import os
import struct
from pathlib import Path

import numpy as np

from .model import ArpgNet, ArpgNetConfig

MAGIC = b"ARPG1"
FORMAT_PREFIX = b"ARPG"


class CheckpointError(ValueError):
    """The file is not a readable checkpoint (truncated, corrupt or inconsistent)."""


class CheckpointVersionError(CheckpointError):
    """The file was written by a different format version."""


def checkpoint_bytes(model: ArpgNet) -> bytes:
    cfg = json.dumps(model.config.to_dict(), sort_keys=True, separators=(",", ":")).encode("utf-8")
    parts = [MAGIC, struct.pack("<I", len(cfg)), cfg]
    for name, p in model.named_parameters():
        raw = name.encode("utf-8")
        parts.append(struct.pack("<I", len(raw)))
        parts.append(raw)
        parts.append(struct.pack(f"<I{p.ndim}I", p.ndim, *p.shape))
        parts.append(np.ascontiguousarray(p.data, dtype="<f4").tobytes())
    return b"".join(parts)


def save_checkpoint(model: ArpgNet, path: str | os.PathLike) -> Path:
    path = Path(path)
    path.write_bytes(checkpoint_bytes(model))
    return path


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.buf):
            raise CheckpointError(f"checkpoint truncated while reading {what} at byte {self.pos}")
        out = self.buf[self.pos: self.pos + n]
        self.pos += n
        return out

    def u32(self, what: str) -> int:
        return struct.unpack("<I", self.take(4, what))[0]


def load_checkpoint(path: str | os.PathLike) -> ArpgNet:
    return model_from_bytes(Path(path).read_bytes())


def model_from_bytes(buf: bytes) -> ArpgNet:
    r = _Reader(buf)
    magic = r.take(len(MAGIC), "magic")
    if magic != MAGIC:
        if magic.startswith(FORMAT_PREFIX):
            raise CheckpointVersionError(f"unsupported checkpoint version {magic!r}; expected {MAGIC!r}")
        raise CheckpointError("not an ARPG checkpoint (bad magic)")
    cfg_len = r.u32("config length")
    try:
        cfg = ArpgNetConfig.from_dict(json.loads(r.take(cfg_len, "config").decode("utf-8")))
    except (UnicodeDecodeError, json.JSONDecodeError, TypeError) as exc:
        raise CheckpointError(f"corrupt config block: {exc}") from exc
    model = ArpgNet(cfg, np.random.default_rng(0))
    expected = dict(model.named_parameters())
    state = {}
    for name, p in expected.items():
        stored = r.take(r.u32("name length"), "parameter name").decode("utf-8", errors="replace")
        if stored != name:
            raise CheckpointError(f"parameter order mismatch: expected {name!r}, found {stored!r}")
        rank = r.u32(f"{name} rank")
        shape = struct.unpack(f"<{rank}I", r.take(4 * rank, f"{name} extents"))
        if shape != p.shape:
            raise CheckpointError(f"{name}: stored shape {shape} inconsistent with config shape {p.shape}")
        n = int(np.prod(shape, dtype=np.int64))
        state[name] = np.frombuffer(r.take(4 * n, f"{name} values"), dtype="<f4").reshape(shape).astype(np.float32)
    if r.pos != len(buf):
        raise CheckpointError(f"{len(buf) - r.pos} trailing bytes after the last parameter")
    model.load_state_dict(state)
    return model
