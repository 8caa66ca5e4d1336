"""Flat binary tensor blobs with a JSON name/shape index.

The blob is the little-endian concatenation of the arrays in index order; the
index records name, dtype, shape and byte offset, plus the SHA-256 of the
whole blob.
"""

from __future__ import annotations

import hashlib
from pathlib import Path

import numpy as np

from ssnet.errors import ChecksumMismatch, DataError


def sha256_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def pack(arrays: dict) -> tuple[bytes, dict]:
    entries, chunks, offset = [], [], 0
    for name, arr in arrays.items():
        arr = np.asarray(arr)
        le = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
        raw = np.ascontiguousarray(le).tobytes()
        entries.append(
            {"name": name, "dtype": arr.dtype.str.lstrip("<>=|"), "shape": list(arr.shape), "offset": offset, "nbytes": len(raw)}
        )
        chunks.append(raw)
        offset += len(raw)
    blob = b"".join(chunks)
    return blob, {"tensors": entries, "sha256": sha256_bytes(blob), "nbytes": len(blob)}


def unpack(blob: bytes, index: dict) -> dict:
    if sha256_bytes(blob) != index["sha256"]:
        raise ChecksumMismatch("tensor blob checksum does not match its index")
    out = {}
    for e in index["tensors"]:
        dtype = np.dtype(e["dtype"]).newbyteorder("<")
        end = e["offset"] + e["nbytes"]
        if end > len(blob):
            raise DataError(f"tensor {e['name']} extends past the end of the blob")
        arr = np.frombuffer(blob[e["offset"] : end], dtype=dtype).reshape(e["shape"])
        out[e["name"]] = arr.astype(arr.dtype.newbyteorder("="))
    return out


def write_blob(path, arrays: dict) -> dict:
    blob, index = pack(arrays)
    Path(path).write_bytes(blob)
    return index


def read_blob(path, index: dict) -> dict:
    return unpack(Path(path).read_bytes(), index)
