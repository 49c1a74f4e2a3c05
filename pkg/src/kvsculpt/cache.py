"""Data model for full and compressed KV caches and zone partitioning.

A full cache holds, per layer and KV head, the RoPE-encoded keys and values
of all N context tokens, plus the per-query-head query vectors the context
produced (the raw material for training queries). Compression splits each
head into an old zone (the first N - m rows, replaced by k distilled pairs)
and a retain zone (the last m rows, kept verbatim).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .attention import ModelShape
from .rope import RopeConfig


@dataclass(frozen=True)
class HeadCache:
    """Key/value rows of one KV head with their token positions."""

    keys: np.ndarray       # (N, d) RoPE-encoded
    values: np.ndarray     # (N, d)
    positions: np.ndarray  # (N,) strictly increasing ints

    def __post_init__(self):
        if self.keys.shape != self.values.shape:
            raise ValueError("keys and values must share shape")
        if self.positions.shape != (self.keys.shape[0],):
            raise ValueError("positions length must equal row count")
        if self.keys.shape[0] > 1 and not np.all(np.diff(self.positions) > 0):
            raise ValueError("positions must be strictly increasing")

    @property
    def size(self) -> int:
        return self.keys.shape[0]


@dataclass(frozen=True)
class ZoneSplit:
    """Old-zone / retain-zone views over one head's cache."""

    old: HeadCache
    retain: HeadCache
    m: int


@dataclass(frozen=True)
class CompressedHead:
    """Distilled pairs plus the untouched retain zone for one KV head."""

    k_c: np.ndarray    # (k, d)
    v_c: np.ndarray    # (k, d)
    k_ret: np.ndarray  # (m, d)
    v_ret: np.ndarray  # (m, d)
    k: int
    m: int

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("compressed head needs k >= 1 distilled pairs")
        if self.k_c.shape != self.v_c.shape or self.k_c.shape[0] != self.k:
            raise ValueError("distilled pair shape mismatch")
        if self.k_ret.shape != self.v_ret.shape or self.k_ret.shape[0] != self.m:
            raise ValueError("retain zone shape mismatch")
        for name in ("k_c", "v_c", "k_ret", "v_ret"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise ValueError(f"{name} contains non-finite entries")

    def cat_keys(self) -> np.ndarray:
        return np.vstack([self.k_c, self.k_ret])

    def cat_values(self) -> np.ndarray:
        return np.vstack([self.v_c, self.v_ret])

    def positions(self, context_len: int) -> np.ndarray:
        """Distilled pairs sit at virtual positions, marked -1."""
        ret = np.arange(context_len - self.m, context_len)
        return np.concatenate([np.full(self.k, -1), ret])


@dataclass
class ModelKvCache:
    """Everything prefill produces: caches, queries, and eval references."""

    shape: ModelShape
    rope: RopeConfig
    context_len: int
    heads: list          # [layer][kv_head] -> HeadCache
    queries: list        # [layer][q_head] -> (N, d) query matrix
    positions: np.ndarray
    ref_logits: np.ndarray | None = None   # (T, vocab)
    ref_tokens: np.ndarray | None = None   # (T,) int ids
    context_tokens: np.ndarray | None = None
    toy_config: dict | None = None
    extra_tensors: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.heads) != self.shape.num_layers:
            raise ValueError("layer count mismatch in heads")
        if len(self.queries) != self.shape.num_layers:
            raise ValueError("layer count mismatch in queries")
        for per_layer in self.heads:
            if len(per_layer) != self.shape.num_kv_heads:
                raise ValueError("kv head count mismatch")
            for hc in per_layer:
                if hc.size != self.context_len:
                    raise ValueError("all heads must share context_len rows")
                if not np.array_equal(hc.positions, self.positions):
                    raise ValueError("all heads must share positions")
        for per_layer in self.queries:
            if len(per_layer) != self.shape.num_q_heads:
                raise ValueError("q head count mismatch")


@dataclass
class CompressedModelCache:
    """Per-head distilled caches for a whole model."""

    shape: ModelShape
    rope: RopeConfig
    context_len: int
    m: int
    heads: list          # [layer][kv_head] -> CompressedHead
    toy_config: dict | None = None

    def __post_init__(self):
        if len(self.heads) != self.shape.num_layers:
            raise ValueError("layer count mismatch")
        for per_layer in self.heads:
            if len(per_layer) != self.shape.num_kv_heads:
                raise ValueError("kv head count mismatch")
            for ch in per_layer:
                if ch.m != self.m:
                    raise ValueError("all heads must share retain size")


def split_zones(cache: HeadCache, m: int) -> ZoneSplit:
    """Split into the oldest N - m rows and the most recent m rows.

    Returns views over the input arrays; nothing is copied.
    """
    n = cache.size
    if m <= 0 or m >= n:
        raise ValueError("invalid retain size")
    cut = n - m
    old = HeadCache(cache.keys[:cut], cache.values[:cut], cache.positions[:cut])
    retain = HeadCache(cache.keys[cut:], cache.values[cut:], cache.positions[cut:])
    return ZoneSplit(old=old, retain=retain, m=m)


def compression_ratio(k: int, m: int, n: int) -> float:
    """Fraction of cache rows surviving compression: (k + m) / n."""
    if n == 0:
        raise ValueError("context length must be positive")
    if k < 0:
        raise ValueError("k must be nonnegative")
    if m <= 0 or m > n:
        raise ValueError("retain size out of range")
    return (k + m) / n


def budget_for_ratio(ratio: float, m: int, n: int) -> int:
    """Per-head distilled-pair count k such that (k + m) / n is closest to ratio."""
    k = int(round(ratio * n)) - m
    if k < 1:
        raise ValueError(f"ratio {ratio} leaves no distillation budget (m={m}, n={n})")
    if k > n - m:
        raise ValueError(f"ratio {ratio} exceeds lossless budget")
    return k


def snap_f32(x: np.ndarray) -> np.ndarray:
    """Round-trip through float32 so values survive interchange exactly."""
    return np.asarray(x, dtype=np.float32).astype(np.float64)
