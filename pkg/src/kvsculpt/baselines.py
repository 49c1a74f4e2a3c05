"""Eviction baselines: random keep, attention-score keep, and select+fit.

All three keep the retain zone untouched and keep keys that are exact rows
of the original old zone; that constraint is precisely what distillation
drops.
"""

from __future__ import annotations

import numpy as np

from .cache import CompressedHead, ZoneSplit
from .distill import (AttentionTarget, attention_importance, attention_weights,
                      select_topk_positions, solve_values)
from .queries import QuerySet


def _head_from_indices(zone: ZoneSplit, idx: np.ndarray) -> CompressedHead:
    return CompressedHead(
        k_c=zone.old.keys[idx].copy(), v_c=zone.old.values[idx].copy(),
        k_ret=zone.retain.keys.copy(), v_ret=zone.retain.values.copy(),
        k=len(idx), m=zone.m,
    )


def evict_random(zone: ZoneSplit, k: int, seed: int) -> CompressedHead:
    """Keep k old-zone pairs chosen uniformly without replacement."""
    if k > zone.old.size:
        raise ValueError("budget exceeds zone")
    rng = np.random.default_rng(seed)
    idx = np.sort(rng.choice(zone.old.size, size=k, replace=False))
    return _head_from_indices(zone, idx)


def evict_attn_score(zone: ZoneSplit, queries: QuerySet, k: int) -> CompressedHead:
    """Keep the top-k old-zone pairs by accumulated attention weight.

    Scoring is shared with the distiller's warm start, so the two always
    select identical positions.
    """
    if k > zone.old.size:
        raise ValueError("budget exceeds zone")
    idx = select_topk_positions(attention_importance(zone, queries), k)
    return _head_from_indices(zone, idx)


def select_and_fit(zone: ZoneSplit, queries: QuerySet, target: AttentionTarget,
                   k: int, lambda_ridge: float) -> CompressedHead:
    """Attention-score selection with ridge-refit values.

    Keys come from evict_attn_score; values are replaced by the closed-form
    solve under the attention weights those keys induce.
    """
    head = evict_attn_score(zone, queries, k)
    weights = attention_weights(head.k_c, zone, queries)
    v_c = solve_values(weights, zone.retain.values, target, lambda_ridge)
    return CompressedHead(k_c=head.k_c, v_c=v_c, k_ret=head.k_ret,
                          v_ret=head.v_ret, k=k, m=zone.m)
