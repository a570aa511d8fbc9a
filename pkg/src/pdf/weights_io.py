"""Portable binary weight files.

Layout (all integers little-endian):

    magic   4 bytes  b"PDF1"
    version u32      format version, currently 1
    count   u32      number of tensors
    per tensor: name_len u16, name bytes (utf-8), rank u8, dims u32 each
    data: for each tensor in header order, row-major float32 values

Tensors are written float32 regardless of in-memory dtype. Reading back
restores dtype, shape, and values bit-exactly for float32 inputs.
"""

from __future__ import annotations

import hashlib
import struct
from typing import Dict

import numpy as np

from .types import DimensionMismatchError, MalformedHeaderError

MAGIC = b"PDF1"
VERSION = 1


def serialize_tensors(tensors: Dict[str, np.ndarray]) -> bytes:
    """Encode an ordered name -> array mapping to the wire format."""
    header = [MAGIC, struct.pack("<II", VERSION, len(tensors))]
    blobs = []
    for name, arr in tensors.items():
        raw = name.encode("utf-8")
        if len(raw) > 0xFFFF:
            raise DimensionMismatchError(f"tensor name too long: {len(raw)} bytes")
        # asarray keeps rank 0 intact; ascontiguousarray would promote it to 1-d
        a = np.asarray(arr, dtype="<f4", order="C")
        if a.ndim > 0xFF:
            raise DimensionMismatchError(f"tensor {name!r} rank {a.ndim} exceeds 255")
        header.append(struct.pack("<H", len(raw)))
        header.append(raw)
        header.append(struct.pack("<B", a.ndim))
        header.append(struct.pack(f"<{a.ndim}I", *a.shape))
        blobs.append(a.tobytes(order="C"))
    return b"".join(header + blobs)


def deserialize_tensors(data: bytes) -> Dict[str, np.ndarray]:
    """Decode wire-format bytes back to an ordered name -> float32 array map."""
    n = len(data)
    if n < 12 or data[:4] != MAGIC:
        raise MalformedHeaderError("bad magic: not a PDF1 weight blob")
    version, count = struct.unpack_from("<II", data, 4)
    if version != VERSION:
        raise MalformedHeaderError(f"unsupported format version {version}")
    off = 12
    metas = []
    for _ in range(count):
        if off + 2 > n:
            raise MalformedHeaderError("truncated header: tensor name length")
        (name_len,) = struct.unpack_from("<H", data, off)
        off += 2
        if off + name_len + 1 > n:
            raise MalformedHeaderError("truncated header: tensor name or rank")
        try:
            name = data[off:off + name_len].decode("utf-8")
        except UnicodeDecodeError as exc:
            raise MalformedHeaderError(f"tensor name is not valid utf-8: {exc}")
        off += name_len
        rank = data[off]
        off += 1
        if off + 4 * rank > n:
            raise MalformedHeaderError("truncated header: tensor dims")
        dims = struct.unpack_from(f"<{rank}I", data, off)
        off += 4 * rank
        metas.append((name, dims))

    out: Dict[str, np.ndarray] = {}
    for name, dims in metas:
        size = 1
        for d in dims:
            size *= d
        nbytes = 4 * size
        if off + nbytes > n:
            raise DimensionMismatchError(
                f"tensor {name!r} declares {size} values but the file is short"
            )
        arr = np.frombuffer(data, dtype="<f4", count=size, offset=off).reshape(dims)
        out[name] = arr.astype(np.float32).copy()
        off += nbytes
    if off != n:
        raise DimensionMismatchError(f"{n - off} trailing bytes after tensor data")
    return out


def write_tensors(path, tensors: Dict[str, np.ndarray]) -> None:
    with open(path, "wb") as fh:
        fh.write(serialize_tensors(tensors))


def read_tensors(path) -> Dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        return deserialize_tensors(fh.read())


def checksum_tensors(tensors: Dict[str, np.ndarray]) -> str:
    """Content digest of the canonical serialization (names, dims, values)."""
    return hashlib.sha256(serialize_tensors(tensors)).hexdigest()


def load_any(path):
    """Load a weight file as whatever it holds: snapshot or perturbation head.

    Dispatches on tensor names, so files stay self-describing.
    """
    from .perturb import PerturbationHead
    from .policy import PolicySnapshot

    tensors = read_tensors(path)
    if "enc.w1" in tensors:
        return PolicySnapshot.from_tensors(tensors)
    if "head.w1" in tensors:
        return PerturbationHead.from_tensors(tensors)
    raise MalformedHeaderError(
        f"unrecognized tensor set {sorted(tensors)}: neither snapshot nor head"
    )
