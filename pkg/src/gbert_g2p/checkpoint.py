"""Binary checkpoint format.

Layout (all integers little-endian)::

    8 bytes   magic b"GBG2PCKP"
    u32       format version
    u64       header length N
    N bytes   UTF-8 JSON header: kind, config, vocabs, meta, and a tensor
              index of {name, shape, offset, nbytes, crc32}
    ...       concatenated little-endian float32 payloads

The header is serialised with sorted keys so equal checkpoints are equal bytes.
"""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MAGIC = b"GBG2PCKP"
VERSION = 1
_PRELUDE = struct.Struct("<8sIQ")


class CheckpointError(Exception):
    pass


class BadMagicError(CheckpointError):
    pass


class VersionMismatchError(CheckpointError):
    pass


class TruncatedCheckpointError(CheckpointError):
    pass


class IntegrityError(CheckpointError):
    pass


class ShapeMismatchError(CheckpointError):
    pass


@dataclass
class Checkpoint:
    kind: str
    config: dict
    vocabs: dict
    tensors: dict[str, np.ndarray]
    meta: dict = field(default_factory=dict)


def to_bytes(ckpt: Checkpoint) -> bytes:
    index = []
    payloads = []
    offset = 0
    for name, arr in ckpt.tensors.items():
        buf = np.ascontiguousarray(arr, dtype="<f4").tobytes()
        index.append({"name": name, "shape": list(arr.shape), "offset": offset,
                      "nbytes": len(buf), "crc32": zlib.crc32(buf)})
        payloads.append(buf)
        offset += len(buf)
    names = [e["name"] for e in index]
    if len(set(names)) != len(names):
        raise CheckpointError("duplicate tensor names")
    header = json.dumps({"kind": ckpt.kind, "config": ckpt.config, "vocabs": ckpt.vocabs,
                         "meta": ckpt.meta, "tensors": index},
                        sort_keys=True, ensure_ascii=False).encode("utf-8")
    return _PRELUDE.pack(MAGIC, VERSION, len(header)) + header + b"".join(payloads)


def from_bytes(raw: bytes) -> Checkpoint:
    if len(raw) < _PRELUDE.size:
        raise TruncatedCheckpointError("file shorter than the checkpoint prelude")
    magic, version, hlen = _PRELUDE.unpack_from(raw)
    if magic != MAGIC:
        raise BadMagicError(f"bad magic {magic!r}")
    if version != VERSION:
        raise VersionMismatchError(f"checkpoint version {version}, expected {VERSION}")
    start = _PRELUDE.size
    if len(raw) < start + hlen:
        raise TruncatedCheckpointError("header truncated")
    try:
        header = json.loads(raw[start:start + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise IntegrityError(f"unreadable header: {e}") from e
    body = raw[start + hlen:]
    tensors = {}
    for e in header["tensors"]:
        lo, n = e["offset"], e["nbytes"]
        if lo + n > len(body):
            raise TruncatedCheckpointError(f"payload of {e['name']!r} truncated")
        buf = body[lo:lo + n]
        if zlib.crc32(buf) != e["crc32"]:
            raise IntegrityError(f"checksum mismatch in tensor {e['name']!r}")
        shape = tuple(e["shape"])
        if int(np.prod(shape, dtype=np.int64)) * 4 != n:
            raise ShapeMismatchError(f"payload size of {e['name']!r} does not match shape {shape}")
        tensors[e["name"]] = np.frombuffer(buf, dtype="<f4").reshape(shape).astype(np.float32)
    return Checkpoint(header["kind"], header["config"], header["vocabs"], tensors, header.get("meta", {}))


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    Path(path).write_bytes(to_bytes(ckpt))


def load_checkpoint(path) -> Checkpoint:
    return from_bytes(Path(path).read_bytes())


def check_shapes(expected: dict[str, np.ndarray], tensors: dict[str, np.ndarray]) -> None:
    """Raise ShapeMismatchError unless ``tensors`` covers ``expected`` with equal shapes."""
    missing = sorted(expected.keys() - tensors.keys())
    if missing:
        raise ShapeMismatchError(f"checkpoint lacks tensors {missing[:5]}")
    for name, arr in expected.items():
        if tensors[name].shape != arr.shape:
            raise ShapeMismatchError(f"{name}: checkpoint {tensors[name].shape} vs model {arr.shape}")
