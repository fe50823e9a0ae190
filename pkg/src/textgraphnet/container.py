"""Binary container: little-endian arrays behind a JSON header.

Layout:
    bytes 0..3   magic b"TGN1"
    bytes 4..7   uint32 little-endian header length
    header       UTF-8 JSON: {"meta": {...}, "arrays": {name: {dtype, shape, offset, nbytes}}}
    payload      raw C-order array buffers at their recorded offsets

Used for serialized compact batches and model checkpoints.
"""

from __future__ import annotations

import json
import struct

import numpy as np

MAGIC = b"TGN1"


class ContainerFormatError(ValueError):
    pass


def _le_dtype(dtype: np.dtype) -> np.dtype:
    dt = np.dtype(dtype)
    if dt.byteorder == ">":
        raise ContainerFormatError(f"big-endian array dtype {dt} not supported")
    return dt.newbyteorder("<") if dt.byteorder == "=" and dt.itemsize > 1 else dt


def save_container(path, meta: dict, arrays: dict) -> None:
    entries = {}
    buffers = []
    offset = 0
    for name, arr in arrays.items():
        arr = np.ascontiguousarray(arr)
        le = arr.astype(_le_dtype(arr.dtype), copy=False)
        buf = le.tobytes()
        entries[name] = {
            "dtype": le.dtype.str,
            "shape": list(arr.shape),
            "offset": offset,
            "nbytes": len(buf),
        }
        buffers.append(buf)
        offset += len(buf)
    header = json.dumps({"meta": meta, "arrays": entries}).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        for buf in buffers:
            fh.write(buf)


def load_container(path):
    """Returns (meta, {name: array}). Arrays come back in native byte order."""
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != MAGIC:
            raise ContainerFormatError(f"bad magic {magic!r} in {path}")
        (hlen,) = struct.unpack("<I", fh.read(4))
        try:
            header = json.loads(fh.read(hlen).decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise ContainerFormatError(f"corrupt header in {path}: {exc}") from exc
        payload = fh.read()
    arrays = {}
    for name, ent in header["arrays"].items():
        start, nbytes = ent["offset"], ent["nbytes"]
        if start + nbytes > len(payload):
            raise ContainerFormatError(f"array {name!r} exceeds payload in {path}")
        arr = np.frombuffer(payload[start:start + nbytes], dtype=np.dtype(ent["dtype"]))
        arr = arr.reshape(ent["shape"]).astype(np.dtype(ent["dtype"]).newbyteorder("="), copy=True)
        arrays[name] = arr
    return header["meta"], arrays
