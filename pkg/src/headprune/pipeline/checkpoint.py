"""Checkpoint container: named tensors, masks, config snapshot, phase tag.

Binary layout (little-endian): magic 'APMC', u32 version=1, u8 phase,
u32 tensor count, then per tensor: u16 name length, name bytes, u8 dtype
(0 = f32, 1 = u8), u8 rank, u32 dims..., raw payload. The file ends with a
u64 FNV-1a checksum of every preceding byte. Writes go to a temporary file
renamed into place.

The config snapshot rides along as a u8 tensor named '__config__' holding
its JSON bytes.
"""

from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass, field

import numpy as np

from ..errors import ContractError, FormatError

MAGIC = b"APMC"
VERSION = 1
PHASES = ("searched", "refined", "compacted")

_CONFIG_KEY = "__config__"
_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_U64_MASK = 0xFFFFFFFFFFFFFFFF


def fnv1a64(data):
    h = _FNV_OFFSET
    for b in data:
        h = ((h ^ b) * _FNV_PRIME) & _U64_MASK
    return h


@dataclass
class Checkpoint:
    phase: str
    config: dict
    tensors: dict = field(default_factory=dict)

    def require_phase(self, *allowed):
        if self.phase not in allowed:
            raise ContractError(
                f"operation needs phase in {allowed}, checkpoint is {self.phase!r}"
            )

    # tensors are grouped by dotted prefixes: param.*, ind.*, mask.*, opt.*
    def group(self, prefix):
        plen = len(prefix)
        return {k[plen:]: v for k, v in self.tensors.items() if k.startswith(prefix)}


def save_checkpoint(path, ckpt):
    if ckpt.phase not in PHASES:
        raise ContractError(f"unknown phase {ckpt.phase!r}")
    named = dict(ckpt.tensors)
    named[_CONFIG_KEY] = np.frombuffer(
        json.dumps(ckpt.config).encode("utf-8"), dtype=np.uint8
    ).copy()
    parts = [MAGIC,
             struct.pack("<I", VERSION),
             struct.pack("<B", PHASES.index(ckpt.phase)),
             struct.pack("<I", len(named))]
    for name in named:
        arr = named[name]
        if arr.dtype == np.float32:
            code = 0
        elif arr.dtype == np.uint8:
            code = 1
        else:
            raise ContractError(f"tensor {name!r} has unsupported dtype {arr.dtype}")
        nb = name.encode("utf-8")
        parts.append(struct.pack("<H", len(nb)))
        parts.append(nb)
        parts.append(struct.pack("<BB", code, arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(np.ascontiguousarray(arr).tobytes())
    blob = b"".join(parts)
    blob += struct.pack("<Q", fnv1a64(blob))
    tmp = path + ".tmp"
    with open(tmp, "wb") as f:
        f.write(blob)
    os.replace(tmp, path)


def load_checkpoint(path):
    with open(path, "rb") as f:
        blob = f.read()
    if len(blob) < 21:
        raise FormatError(f"{path}: file too short to be a checkpoint")
    body, (stored,) = blob[:-8], struct.unpack("<Q", blob[-8:])
    if fnv1a64(body) != stored:
        raise FormatError(f"{path}: checksum mismatch; file is corrupt")
    off = 0

    def take(n, what):
        nonlocal off
        if off + n > len(body):
            raise FormatError(f"{path}: truncated while reading {what}")
        chunk = body[off:off + n]
        off += n
        return chunk

    if take(4, "magic") != MAGIC:
        raise FormatError(f"{path}: bad magic")
    (version,) = struct.unpack("<I", take(4, "version"))
    if version != VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    (phase_idx,) = struct.unpack("<B", take(1, "phase"))
    if phase_idx >= len(PHASES):
        raise FormatError(f"{path}: unknown phase tag {phase_idx}")
    (count,) = struct.unpack("<I", take(4, "tensor count"))
    tensors = {}
    for _ in range(count):
        (nlen,) = struct.unpack("<H", take(2, "name length"))
        name = take(nlen, "name").decode("utf-8")
        code, rank = struct.unpack("<BB", take(2, "dtype/rank"))
        if code not in (0, 1):
            raise FormatError(f"{path}: tensor {name!r} has unknown dtype {code}")
        shape = struct.unpack(f"<{rank}I", take(4 * rank, "dims"))
        n = int(np.prod(shape, dtype=np.int64)) if rank else 1
        itemsize = 4 if code == 0 else 1
        raw = take(n * itemsize, f"payload of {name!r}")
        dtype = np.dtype("<f4") if code == 0 else np.dtype(np.uint8)
        tensors[name] = np.frombuffer(raw, dtype=dtype).reshape(shape).copy()
    if off != len(body):
        raise FormatError(f"{path}: {len(body) - off} trailing bytes")
    if _CONFIG_KEY not in tensors:
        raise FormatError(f"{path}: missing config record")
    try:
        config = json.loads(tensors.pop(_CONFIG_KEY).tobytes().decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as err:
        raise FormatError(f"{path}: config record is not valid JSON: {err}") from err
    return Checkpoint(phase=PHASES[phase_idx], config=config, tensors=tensors)
