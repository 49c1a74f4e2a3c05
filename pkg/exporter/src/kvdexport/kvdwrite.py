"""Standalone writer for the .kvd cache interchange format.

Layout: 4-byte magic "KVD1", u32 version 1 (LE), u64 manifest length (LE),
UTF-8 JSON manifest, then the raw little-endian row-major tensor payload.
Tensor byte offsets in the manifest are relative to the payload start.

This is deliberately independent of the engine that consumes these files;
the format is the contract between the two.
"""

from __future__ import annotations

import json
import struct

import numpy as np

MAGIC = b"KVD1"
VERSION = 1
_DTYPES = {"f32": np.dtype("<f4"), "f64": np.dtype("<f8")}


def write_kvd_file(path, manifest_fields: dict, tensors: dict) -> None:
    """Write tensors (name -> (array, dtype)) with the given manifest fields."""
    entries = []
    payload_parts = []
    offset = 0
    for name, (array, dtype) in tensors.items():
        raw = np.ascontiguousarray(array, dtype=_DTYPES[dtype]).tobytes()
        entries.append({
            "name": name,
            "shape": list(np.asarray(array).shape),
            "dtype": dtype,
            "byte_offset": offset,
            "byte_len": len(raw),
        })
        payload_parts.append(raw)
        offset += len(raw)
    manifest = dict(manifest_fields)
    manifest["tensors"] = entries
    blob = json.dumps(manifest, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        fh.write(b"".join(payload_parts))
