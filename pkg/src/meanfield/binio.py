"""Flat binary arrays with a JSON header.

Layout: 8-byte little-endian header length, UTF-8 JSON header, then the
raw little-endian arrays listed in ``header["arrays"]`` back to back.
"""
from __future__ import annotations

import json
import struct

import numpy as np


def dump(path, header: dict, arrays: dict[str, np.ndarray]) -> None:
    specs = []
    blobs = []
    for name, arr in arrays.items():
        arr = np.ascontiguousarray(arr)
        dtype = arr.dtype.newbyteorder("<")
        specs.append({"name": name, "dtype": dtype.str, "shape": list(arr.shape)})
        blobs.append(arr.astype(dtype, copy=False).tobytes())
    head = json.dumps({**header, "arrays": specs}, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(struct.pack("<Q", len(head)))
        fh.write(head)
        for b in blobs:
            fh.write(b)


def load(path) -> tuple[dict, dict[str, np.ndarray]]:
    with open(path, "rb") as fh:
        (n,) = struct.unpack("<Q", fh.read(8))
        header = json.loads(fh.read(n))
        arrays = {}
        for spec in header["arrays"]:
            dtype = np.dtype(spec["dtype"])
            count = int(np.prod(spec["shape"], dtype=np.int64))
            data = np.frombuffer(fh.read(count * dtype.itemsize), dtype=dtype)
            arrays[spec["name"]] = data.reshape(spec["shape"]).astype(dtype.newbyteorder("="))
    return header, arrays
