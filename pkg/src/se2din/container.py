"""Binary container shared by checkpoints and cached datasets.

Layout (all integers little-endian)::

    b"SE2D"                      magic
    u32                          format version
    u64                          header length in bytes
    header                       UTF-8 JSON
    repeated until end of file:
        u32 name length, name (UTF-8)
        u32 rank, rank x u64 extents
        float32 values, row-major
"""
from __future__ import annotations

import json
import os
import struct
import tempfile
from pathlib import Path
from typing import Iterable

import numpy as np

MAGIC = b"SE2D"
VERSION = 1


class ContainerError(ValueError):
    pass


def atomic_write_bytes(path, payload: bytes) -> None:
    """Write to a temporary sibling then rename over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(payload)
        os.chmod(tmp, 0o666 & ~_umask())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _umask() -> int:
    mask = os.umask(0)
    os.umask(mask)
    return mask


def atomic_write_text(path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def encode(header: dict, tensors: Iterable[tuple[str, np.ndarray]]) -> bytes:
    head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    parts = [MAGIC, struct.pack("<IQ", VERSION, len(head)), head]
    for name, arr in tensors:
        arr = np.ascontiguousarray(arr, dtype="<f4")
        bname = name.encode("utf-8")
        parts.append(struct.pack("<I", len(bname)))
        parts.append(bname)
        parts.append(struct.pack("<I", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        parts.append(arr.tobytes())
    return b"".join(parts)


def decode(payload: bytes) -> tuple[dict, list[tuple[str, np.ndarray]]]:
    if payload[:4] != MAGIC:
        raise ContainerError("bad magic bytes")
    if len(payload) < 16:
        raise ContainerError("truncated header")
    version, hlen = struct.unpack_from("<IQ", payload, 4)
    if version != VERSION:
        raise ContainerError(f"unsupported format version {version}")
    pos = 16
    if pos + hlen > len(payload):
        raise ContainerError("truncated header")
    header = json.loads(payload[pos:pos + hlen].decode("utf-8"))
    pos += hlen
    tensors = []
    try:
        while pos < len(payload):
            (nlen,) = struct.unpack_from("<I", payload, pos)
            pos += 4
            name = payload[pos:pos + nlen].decode("utf-8")
            pos += nlen
            (rank,) = struct.unpack_from("<I", payload, pos)
            pos += 4
            shape = struct.unpack_from(f"<{rank}Q", payload, pos)
            pos += 8 * rank
            count = int(np.prod(shape, dtype=np.int64))
            end = pos + 4 * count
            if end > len(payload):
                raise ContainerError(f"truncated tensor {name!r}")
            arr = np.frombuffer(payload, dtype="<f4", count=count, offset=pos).reshape(shape)
            tensors.append((name, arr.astype(np.float32)))
            pos = end
    except struct.error as exc:
        raise ContainerError("truncated tensor record") from exc
    return header, tensors


def save(path, header: dict, tensors: Iterable[tuple[str, np.ndarray]]) -> None:
    atomic_write_bytes(path, encode(header, tensors))


def load(path) -> tuple[dict, list[tuple[str, np.ndarray]]]:
    return decode(Path(path).read_bytes())
