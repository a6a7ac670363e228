"""Versioned binary container used for label files and model checkpoints.

Layout (all integers little-endian)::

    8 bytes   magic  b"GRDRISK\\0"
    4 bytes   uint32 format version (1)
    8 bytes   uint64 header length H
    H bytes   UTF-8 JSON header (sorted keys, no whitespace); header["arrays"]
              lists {"name", "dtype", "shape"} in storage order
    ...       raw C-order little-endian array bytes, concatenated

Output is a pure function of the header and array contents, so identical
inputs give byte-identical files.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"GRDRISK\0"
VERSION = 1


def write_container(path: str | Path, header: dict, arrays: dict[str, np.ndarray]) -> None:
    specs = []
    blobs = []
    for name, arr in arrays.items():
        arr = np.ascontiguousarray(arr)
        dt = arr.dtype.newbyteorder("<") if arr.dtype.byteorder == ">" else arr.dtype
        arr = arr.astype(dt, copy=False)
        specs.append({"name": name, "dtype": dt.str, "shape": list(arr.shape)})
        blobs.append(arr.tobytes(order="C"))
    head = dict(header)
    head["arrays"] = specs
    hbytes = json.dumps(head, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<IQ", VERSION, len(hbytes)))
        fh.write(hbytes)
        for b in blobs:
            fh.write(b)


def read_container(path: str | Path) -> tuple[dict, dict[str, np.ndarray]]:
    data = Path(path).read_bytes()
    if data[:8] != MAGIC:
        raise ValueError(f"{path}: not a gridrisk container")
    version, hlen = struct.unpack("<IQ", data[8:20])
    if version != VERSION:
        raise ValueError(f"{path}: unsupported container version {version}")
    header = json.loads(data[20:20 + hlen].decode("utf-8"))
    off = 20 + hlen
    arrays = {}
    for spec in header["arrays"]:
        dt = np.dtype(spec["dtype"])
        count = int(np.prod(spec["shape"], dtype=np.int64))
        arr = np.frombuffer(data, dtype=dt, count=count, offset=off).reshape(spec["shape"])
        arrays[spec["name"]] = arr.copy()
        off += count * dt.itemsize
    return header, arrays
