"""Weight blobs: magic, JSON header, then little-endian tensor data.

Layout::

    b"OCNW" | uint32 LE header length | header JSON (utf-8) | raw tensors

The header lists every tensor's name, shape, dtype and byte offset relative
to the start of the data section, in layer order.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from ..archspace import ArchDescriptor
from ..exceptions import WeightFormatError
from .layers import check_weights

MAGIC = b"OCNW"
FORMAT_VERSION = 1


def dumps_weights(weights: dict, arch: ArchDescriptor | None = None) -> bytes:
    tensors, chunks, offset = [], [], 0
    for name, value in weights.items():
        data = np.ascontiguousarray(value, dtype=np.dtype(value.dtype).newbyteorder("<")).tobytes()
        tensors.append({"name": name, "shape": list(value.shape), "dtype": "<f4" if value.dtype == np.float32 else "<f8",
                        "offset": offset, "nbytes": len(data)})
        chunks.append(data)
        offset += len(data)
    header = {"format": "occamnas-weights", "version": FORMAT_VERSION, "tensors": tensors}
    if arch is not None:
        header["layer_order"] = [layer.kind for layer in arch.layers]
        header["point"] = [arch.point.k, arch.point.c]
    raw = json.dumps(header, sort_keys=True).encode()
    return MAGIC + struct.pack("<I", len(raw)) + raw + b"".join(chunks)


def loads_weights(blob: bytes, arch: ArchDescriptor | None = None) -> dict:
    if blob[:4] != MAGIC:
        raise WeightFormatError("not an occamnas weight blob (bad magic)")
    if len(blob) < 8:
        raise WeightFormatError("truncated weight blob header")
    (hlen,) = struct.unpack("<I", blob[4:8])
    if len(blob) < 8 + hlen:
        raise WeightFormatError("truncated weight blob header")
    try:
        header = json.loads(blob[8:8 + hlen])
    except ValueError as exc:
        raise WeightFormatError(f"unreadable weight header: {exc}") from exc
    data = memoryview(blob)[8 + hlen:]
    weights = {}
    for t in header.get("tensors", []):
        end = t["offset"] + t["nbytes"]
        if end > len(data):
            raise WeightFormatError(f"truncated weight blob: tensor {t['name']} needs {end} bytes, have {len(data)}")
        arr = np.frombuffer(data[t["offset"]:end], dtype=np.dtype(t["dtype"]))
        if arr.size != int(np.prod(t["shape"], dtype=np.int64)):
            raise WeightFormatError(f"tensor {t['name']} size does not match its shape")
        weights[t["name"]] = arr.reshape(t["shape"]).astype(np.dtype(t["dtype"]).newbyteorder("="))
    if arch is not None:
        try:
            check_weights(arch, weights)
        except ValueError as exc:
            raise WeightFormatError(str(exc)) from exc
    return weights


def save_weights(path, weights: dict, arch: ArchDescriptor | None = None) -> None:
    Path(path).write_bytes(dumps_weights(weights, arch))


def load_weights(path, arch: ArchDescriptor | None = None) -> dict:
    return loads_weights(Path(path).read_bytes(), arch)
