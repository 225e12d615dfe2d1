"""Binary tensor container.

Layout: magic ``b"POSMTNSR"``, little-endian uint32 format version, uint32
header length, UTF-8 JSON header, then the tensors as little-endian float32
in header order. The header lists each tensor's name and shape plus a
free-form ``meta`` object; keys are sorted so equal content gives equal bytes.
"""
from __future__ import annotations

import json
import os
import struct
import tempfile
from pathlib import Path
from typing import Mapping

import numpy as np

MAGIC = b"POSMTNSR"
VERSION = 1


class ContainerError(ValueError):
    pass


def dumps(tensors: Mapping[str, np.ndarray], meta: Mapping | None = None) -> bytes:
    names = list(tensors)
    header = {
        "meta": meta or {},
        "tensors": [{"name": n, "shape": list(np.shape(tensors[n]))} for n in names],
    }
    hbytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    body = b"".join(np.ascontiguousarray(tensors[n], dtype="<f4").tobytes() for n in names)
    return MAGIC + struct.pack("<II", VERSION, len(hbytes)) + hbytes + body


def loads(data: bytes) -> tuple[dict[str, np.ndarray], dict]:
    if len(data) < len(MAGIC) + 8 or not data.startswith(MAGIC):
        raise ContainerError("not a tensor container (bad magic or truncated header)")
    version, hlen = struct.unpack_from("<II", data, len(MAGIC))
    if version != VERSION:
        raise ContainerError(f"unsupported container version {version} (expected {VERSION})")
    start = len(MAGIC) + 8
    if len(data) < start + hlen:
        raise ContainerError("truncated file: header incomplete")
    try:
        header = json.loads(data[start:start + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ContainerError(f"corrupt header: {exc}") from None
    offset = start + hlen
    tensors = {}
    for entry in header["tensors"]:
        shape = tuple(entry["shape"])
        nbytes = 4 * int(np.prod(shape, dtype=np.int64))
        if len(data) < offset + nbytes:
            raise ContainerError(f"truncated file: tensor {entry['name']!r} incomplete")
        arr = np.frombuffer(data, dtype="<f4", count=nbytes // 4, offset=offset)
        tensors[entry["name"]] = arr.astype(np.float32).reshape(shape)
        offset += nbytes
    if offset != len(data):
        raise ContainerError(f"{len(data) - offset} trailing bytes after last tensor")
    return tensors, header["meta"]


def atomic_write(path: str | os.PathLike, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save(path, tensors: Mapping[str, np.ndarray], meta: Mapping | None = None) -> None:
    atomic_write(path, dumps(tensors, meta))


def load(path) -> tuple[dict[str, np.ndarray], dict]:
    return loads(Path(path).read_bytes())


def check_shapes(tensors: Mapping[str, np.ndarray], expected: Mapping[str, tuple[int, ...]]) -> None:
    """Raise naming the first tensor whose shape disagrees with ``expected``."""
    for name, shape in expected.items():
        if name not in tensors:
            raise ContainerError(f"missing tensor {name!r}")
        if tuple(tensors[name].shape) != tuple(shape):
            raise ContainerError(
                f"shape mismatch for tensor {name!r}: file has {tuple(tensors[name].shape)}, "
                f"model expects {tuple(shape)}"
            )
    extra = set(tensors) - set(expected)
    if extra:
        raise ContainerError(f"unexpected tensors in file: {sorted(extra)}")
