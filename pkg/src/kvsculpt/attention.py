"""Scaled dot-product attention with log-sum-exp tracking.

Attention over a cache chunk is fully summarized by the pair (output, lse):
two chunks attended separately can be merged into the exact monolithic
result by reweighting with their lse values, which is what lets a compressed
context chunk be combined with freshly decoded tokens later.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .linalg import as_matrix, softmax_lse_rows


@dataclass(frozen=True)
class ModelShape:
    """Head geometry of a grouped-query attention model."""

    num_layers: int
    num_q_heads: int
    num_kv_heads: int
    head_dim: int

    def __post_init__(self):
        if min(self.num_layers, self.num_q_heads, self.num_kv_heads, self.head_dim) <= 0:
            raise ValueError("all shape fields must be positive")
        if self.num_q_heads % self.num_kv_heads != 0:
            raise ValueError("num_q_heads must be divisible by num_kv_heads")

    @property
    def group_size(self) -> int:
        return self.num_q_heads // self.num_kv_heads


@dataclass(frozen=True)
class AttentionOutput:
    """Partial attention result for one chunk: per-query output rows and lse."""

    output: np.ndarray  # (n_q, d)
    lse: np.ndarray     # (n_q,)


def attend(queries, keys, values, head_dim: int | None = None) -> AttentionOutput:
    """output = softmax(Q K^T / sqrt(d)) V, plus the row-wise log-sum-exp.

    head_dim sets the score scaling; it defaults to the query dimension.
    """
    q = as_matrix(queries, "queries")
    k = as_matrix(keys, "keys")
    v = as_matrix(values, "values")
    if k.shape[0] == 0:
        raise ValueError("empty cache")
    if q.shape[1] != k.shape[1]:
        raise ValueError("query/key dimension mismatch")
    if k.shape[0] != v.shape[0]:
        raise ValueError("key/value row mismatch")
    d = q.shape[1] if head_dim is None else head_dim
    if d != q.shape[1]:
        raise ValueError("head_dim does not match query dimension")
    scores = (q @ k.T) / math.sqrt(d)
    probs, lse = softmax_lse_rows(scores)
    return AttentionOutput(output=probs @ v, lse=lse)


def empty_chunk(n_q: int, d: int) -> AttentionOutput:
    """The neutral element for combine_chunks: lse = -inf, zero output."""
    return AttentionOutput(output=np.zeros((n_q, d)), lse=np.full(n_q, -np.inf))


def combine_chunks(a: AttentionOutput, b: AttentionOutput) -> AttentionOutput:
    """Merge two chunk results into the result of attending over both at once."""
    if a.output.shape != b.output.shape or a.lse.shape != b.lse.shape:
        raise ValueError("chunk shape mismatch")
    lse = np.logaddexp(a.lse, b.lse)
    # Rows where both chunks are empty stay empty; avoid -inf minus -inf.
    wa = np.zeros_like(lse)
    wb = np.zeros_like(lse)
    live = lse > -np.inf
    wa[live] = np.exp(a.lse[live] - lse[live])
    wb[live] = np.exp(b.lse[live] - lse[live])
    out = wa[:, None] * a.output + wb[:, None] * b.output
    return AttentionOutput(output=out, lse=lse)


def gqa_expand(queries_by_qhead: list[np.ndarray], kv_head_index: int, group_size: int) -> list[np.ndarray]:
    """Query matrices served by one KV head under contiguous grouping.

    Query heads [kv*g, (kv+1)*g) map to KV head kv.
    """
    n = len(queries_by_qhead)
    if n % group_size != 0:
        raise ValueError("query head count not divisible by group size")
    num_kv = n // group_size
    if not (0 <= kv_head_index < num_kv):
        raise ValueError(f"kv head index {kv_head_index} out of range [0, {num_kv})")
    start = kv_head_index * group_size
    return list(queries_by_qhead[start:start + group_size])
