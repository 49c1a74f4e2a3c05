"""Bit-exact binary interchange format for KV caches (".kvd").

Layout:

    bytes 0-3    magic "KVD1"
    bytes 4-7    u32 format version (= 1), little-endian
    bytes 8-15   u64 manifest byte length, little-endian
    ...          UTF-8 JSON manifest
    ...          raw tensor payload

The manifest declares the model shape, the rope configuration (theta_base,
pairing convention, query grouping convention), context_len, the retain size
m for compressed files, and a tensor table of (name, shape, dtype,
byte_offset, byte_len). Offsets are relative to the start of the payload
section; all payload data is little-endian and row-major.

Tensor names: ``layer{L}.kvhead{H}.keys`` / ``.values`` (for compressed
files these hold the retain zone), ``layer{L}.kvhead{H}.kc`` / ``.vc``
(distilled pairs), ``layer{L}.qhead{H}.queries``, ``positions`` (retain-zone
positions only, for compressed files), ``ref.logits``, ``ref.tokens``.
Unrecognized names are preserved and exposed via ``extra_tensors``.

Float tensors are stored as f32 and upcast to f64 on load; integer vectors
(positions, token ids) ride as f64 so they stay exact.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict

import numpy as np

from .attention import ModelShape
from .cache import CompressedHead, CompressedModelCache, HeadCache, ModelKvCache
from .errors import KvdBadMagic, KvdLayoutError, KvdTruncated, KvdVersionMismatch
from .rope import RopeConfig

MAGIC = b"KVD1"
VERSION = 1
_DTYPES = {"f32": np.dtype("<f4"), "f64": np.dtype("<f8")}


def _tensor_entries(tensors: dict[str, tuple[np.ndarray, str]]):
    """Assign contiguous payload offsets. Order is the insertion order."""
    entries = []
    payload_parts = []
    offset = 0
    for name, (array, dtype) in tensors.items():
        raw = np.ascontiguousarray(array, dtype=_DTYPES[dtype]).tobytes()
        entries.append({
            "name": name,
            "shape": list(array.shape),
            "dtype": dtype,
            "byte_offset": offset,
            "byte_len": len(raw),
        })
        payload_parts.append(raw)
        offset += len(raw)
    return entries, b"".join(payload_parts)


def _collect_full(cache: ModelKvCache) -> tuple[dict, dict]:
    tensors: dict[str, tuple[np.ndarray, str]] = {}
    tensors["positions"] = (cache.positions, "f64")
    for layer in range(cache.shape.num_layers):
        for h in range(cache.shape.num_kv_heads):
            hc = cache.heads[layer][h]
            tensors[f"layer{layer}.kvhead{h}.keys"] = (hc.keys, "f32")
            tensors[f"layer{layer}.kvhead{h}.values"] = (hc.values, "f32")
        for h in range(cache.shape.num_q_heads):
            tensors[f"layer{layer}.qhead{h}.queries"] = (cache.queries[layer][h], "f32")
    if cache.ref_tokens is not None:
        tensors["ref.tokens"] = (cache.ref_tokens, "f64")
    if cache.ref_logits is not None:
        tensors["ref.logits"] = (cache.ref_logits, "f32")
    if cache.context_tokens is not None:
        tensors["context.tokens"] = (cache.context_tokens, "f64")
    for name in sorted(cache.extra_tensors):
        tensors[name] = (cache.extra_tensors[name], "f32")
    manifest = {
        "kind": "full",
        "shape": asdict(cache.shape),
        "rope": {
            "theta_base": cache.rope.theta_base,
            "pairing": cache.rope.pairing,
            "grouping": "contiguous",
        },
        "context_len": cache.context_len,
    }
    if cache.toy_config is not None:
        manifest["toy_model"] = cache.toy_config
    return manifest, tensors


def _collect_compressed(cache: CompressedModelCache) -> tuple[dict, dict]:
    tensors: dict[str, tuple[np.ndarray, str]] = {}
    retain_positions = np.arange(cache.context_len - cache.m, cache.context_len, dtype=np.float64)
    tensors["positions"] = (retain_positions, "f64")
    for layer in range(cache.shape.num_layers):
        for h in range(cache.shape.num_kv_heads):
            ch = cache.heads[layer][h]
            tensors[f"layer{layer}.kvhead{h}.kc"] = (ch.k_c, "f32")
            tensors[f"layer{layer}.kvhead{h}.vc"] = (ch.v_c, "f32")
            tensors[f"layer{layer}.kvhead{h}.keys"] = (ch.k_ret, "f32")
            tensors[f"layer{layer}.kvhead{h}.values"] = (ch.v_ret, "f32")
    manifest = {
        "kind": "compressed",
        "shape": asdict(cache.shape),
        "rope": {
            "theta_base": cache.rope.theta_base,
            "pairing": cache.rope.pairing,
            "grouping": "contiguous",
        },
        "context_len": cache.context_len,
        "retain": cache.m,
    }
    if cache.toy_config is not None:
        manifest["toy_model"] = cache.toy_config
    return manifest, tensors


def write_kvd(cache, path) -> None:
    """Serialize a full or compressed model cache."""
    if isinstance(cache, ModelKvCache):
        manifest, tensors = _collect_full(cache)
    elif isinstance(cache, CompressedModelCache):
        manifest, tensors = _collect_compressed(cache)
    else:
        raise TypeError(f"cannot serialize {type(cache).__name__}")
    entries, payload = _tensor_entries(tensors)
    manifest["tensors"] = entries
    manifest_bytes = json.dumps(manifest, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        fh.write(struct.pack("<Q", len(manifest_bytes)))
        fh.write(manifest_bytes)
        fh.write(payload)


def _validate_table(entries, payload_len: int):
    spans = []
    for e in entries:
        dtype = _DTYPES.get(e.get("dtype"))
        if dtype is None:
            raise KvdLayoutError(f"unknown dtype {e.get('dtype')!r}")
        count = int(np.prod(e["shape"], dtype=np.int64)) if e["shape"] else 1
        if e["byte_len"] != count * dtype.itemsize:
            raise KvdLayoutError(f"tensor {e['name']}: byte_len does not match shape")
        if e["byte_offset"] < 0:
            raise KvdLayoutError(f"tensor {e['name']}: negative offset")
        if e["byte_offset"] + e["byte_len"] > payload_len:
            raise KvdTruncated(f"tensor {e['name']} extends past end of file")
        spans.append((e["byte_offset"], e["byte_offset"] + e["byte_len"], e["name"]))
    spans.sort()
    for (s0, e0, n0), (s1, e1, n1) in zip(spans, spans[1:]):
        if s1 < e0:
            raise KvdLayoutError(f"tensors {n0} and {n1} overlap")


def read_kvd(path):
    """Parse a .kvd file into a ModelKvCache or CompressedModelCache.

    Raises KvdBadMagic, KvdVersionMismatch, KvdTruncated, or KvdLayoutError;
    no partially constructed cache ever escapes.
    """
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 4 or blob[:4] != MAGIC:
        raise KvdBadMagic("bad magic")
    if len(blob) < 16:
        raise KvdTruncated("header truncated")
    (version,) = struct.unpack("<I", blob[4:8])
    if version != VERSION:
        raise KvdVersionMismatch(f"unsupported version {version}")
    (manifest_len,) = struct.unpack("<Q", blob[8:16])
    if 16 + manifest_len > len(blob):
        raise KvdTruncated("manifest extends past end of file")
    try:
        manifest = json.loads(blob[16:16 + manifest_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise KvdLayoutError(f"manifest is not valid JSON: {exc}") from exc
    payload = blob[16 + manifest_len:]
    entries = manifest.get("tensors")
    if not isinstance(entries, list):
        raise KvdLayoutError("manifest lacks a tensor table")
    _validate_table(entries, len(payload))

    arrays: dict[str, np.ndarray] = {}
    for e in entries:
        dtype = _DTYPES[e["dtype"]]
        raw = payload[e["byte_offset"]:e["byte_offset"] + e["byte_len"]]
        arrays[e["name"]] = np.frombuffer(raw, dtype=dtype).reshape(e["shape"]).astype(np.float64)

    try:
        shape = ModelShape(**manifest["shape"])
        rope = RopeConfig(
            head_dim=shape.head_dim,
            theta_base=manifest["rope"]["theta_base"],
            pairing=manifest["rope"].get("pairing", "adjacent"),
        )
        context_len = int(manifest["context_len"])
        kind = manifest.get("kind", "full")
    except (KeyError, TypeError, ValueError) as exc:
        raise KvdLayoutError(f"manifest field invalid: {exc}") from exc

    def take(name):
        if name not in arrays:
            raise KvdLayoutError(f"manifest tensor table lacks {name}")
        return arrays.pop(name)

    if kind == "compressed":
        m = int(manifest["retain"])
        heads = []
        for layer in range(shape.num_layers):
            row = []
            for h in range(shape.num_kv_heads):
                prefix = f"layer{layer}.kvhead{h}"
                kc = take(prefix + ".kc")
                row.append(CompressedHead(
                    k_c=kc, v_c=take(prefix + ".vc"),
                    k_ret=take(prefix + ".keys"), v_ret=take(prefix + ".values"),
                    k=kc.shape[0], m=m,
                ))
            heads.append(row)
        arrays.pop("positions", None)
        return CompressedModelCache(
            shape=shape, rope=rope, context_len=context_len, m=m, heads=heads,
            toy_config=manifest.get("toy_model"),
        )

    positions = take("positions").astype(np.int64)
    heads = []
    queries = []
    for layer in range(shape.num_layers):
        hrow = []
        for h in range(shape.num_kv_heads):
            prefix = f"layer{layer}.kvhead{h}"
            hrow.append(HeadCache(take(prefix + ".keys"), take(prefix + ".values"), positions))
        heads.append(hrow)
        qrow = [take(f"layer{layer}.qhead{h}.queries") for h in range(shape.num_q_heads)]
        queries.append(qrow)
    ref_tokens = arrays.pop("ref.tokens", None)
    ref_logits = arrays.pop("ref.logits", None)
    context_tokens = arrays.pop("context.tokens", None)
    return ModelKvCache(
        shape=shape, rope=rope, context_len=context_len,
        heads=heads, queries=queries, positions=positions,
        ref_logits=ref_logits,
        ref_tokens=ref_tokens.astype(np.int64) if ref_tokens is not None else None,
        context_tokens=context_tokens.astype(np.int64) if context_tokens is not None else None,
        toy_config=manifest.get("toy_model"),
        extra_tensors=arrays,
    )
