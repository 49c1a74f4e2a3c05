"""Compression quality metrics over teacher-forced decodes.

The headline number is the mean per-token KL divergence between the output
distributions under the reference (full) cache and the compressed cache,
with the full-cache distribution as ground truth. Supporting diagnostics:
per-token KL concentration statistics, a per-layer hidden-state error
profile, and the attention-cosine horizons used by the query-sampling
ablation.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .cache import CompressedModelCache, ModelKvCache
from .queries import sample_synthetic_queries
from .toymodel import ToyModel, decode_teacher_forced


@dataclass(frozen=True)
class KlStats:
    kl_mean: float
    kl_per_token: np.ndarray
    kl_max_over_mean: float
    kl_top5_fraction: float


@dataclass(frozen=True)
class EvalReport:
    kl_mean: float
    kl_per_token: np.ndarray
    layer_mse_profile: np.ndarray
    kl_max_over_mean: float
    kl_top5_fraction: float
    attn_cos_near: float
    attn_cos_far: float

    def to_json(self) -> str:
        return json.dumps({
            "kl_mean": self.kl_mean,
            "kl_per_token": [float(x) for x in self.kl_per_token],
            "layer_mse_profile": [float(x) for x in self.layer_mse_profile],
            "kl_max_over_mean": self.kl_max_over_mean,
            "kl_top5_fraction": self.kl_top5_fraction,
            "attn_cos_near": self.attn_cos_near,
            "attn_cos_far": self.attn_cos_far,
        }, indent=2)


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def concentration_stats(kl_per_token) -> tuple[float, float]:
    """(max/mean ratio, fraction of total mass in the 5 largest entries)."""
    v = np.asarray(kl_per_token, dtype=np.float64)
    if v.ndim != 1 or v.size == 0:
        raise ValueError("need a nonempty 1-D vector")
    total = float(v.sum())
    mean = total / v.size
    if total <= 0:
        return 0.0, 0.0
    top5 = float(np.sort(v)[::-1][:5].sum())
    return float(v.max() / mean), top5 / total


def kl_report(logits_compressed, logits_full) -> KlStats:
    """Per-token KL(full || compressed) over softmaxed logits rows."""
    lc = np.asarray(logits_compressed, dtype=np.float64)
    lf = np.asarray(logits_full, dtype=np.float64)
    if lc.shape != lf.shape or lc.ndim != 2:
        raise ValueError("logit shapes must match and be 2-D")
    logp = _log_softmax(lf)
    logq = _log_softmax(lc)
    p = np.exp(logp)
    per_token = np.sum(p * (logp - logq), axis=1)
    per_token = np.maximum(per_token, 0.0)  # clamp -1e-17 float dust
    ratio, top5 = concentration_stats(per_token)
    return KlStats(
        kl_mean=float(per_token.mean()),
        kl_per_token=per_token,
        kl_max_over_mean=ratio,
        kl_top5_fraction=top5,
    )


def layer_error_profile(model: ToyModel, full_cache: ModelKvCache,
                        compressed_cache: CompressedModelCache,
                        continuation_tokens, t_steps: int) -> np.ndarray:
    """Hidden-state MSE per layer between the two decodes.

    Measured after each block's residual additions and averaged over decode
    steps and hidden dimensions.
    """
    _, cap_full = decode_teacher_forced(model, full_cache, continuation_tokens,
                                        t_steps, capture_hidden=True)
    _, cap_comp = decode_teacher_forced(model, compressed_cache, continuation_tokens,
                                        t_steps, capture_hidden=True)
    n_layers = model.shape.num_layers
    profile = np.zeros(n_layers)
    for step in range(t_steps):
        for layer in range(n_layers):
            diff = cap_comp["hidden"][step][layer] - cap_full["hidden"][step][layer]
            profile[layer] += float(np.mean(diff * diff))
    return profile / t_steps


def attn_cosine_horizons(model: ToyModel, cache: ModelKvCache, strategy: str,
                         near_t: int, far_t: int, seed: int = 0) -> tuple[float, float]:
    """How well a sampling strategy's proxy queries predict future attention.

    For each future decode position, compares the true query's attention
    weights over the full cache against the proxy query's; the near value
    averages positions [0, near_t), the far value positions [near_t, far_t).
    The "oracle" strategy feeds the true queries back (cosine exactly 1),
    which pins the measurement seam.
    """
    if near_t < 1 or far_t <= near_t:
        raise ValueError("need 1 <= near_t < far_t")
    if cache.ref_tokens is None or len(cache.ref_tokens) < far_t:
        raise ValueError("cache lacks enough continuation tokens")
    shape = model.shape
    n = cache.context_len
    _, caps = decode_teacher_forced(model, cache, cache.ref_tokens, far_t,
                                    capture_queries=True)
    true_q = caps["queries"]   # [t][layer] -> (h_q, d)

    proxies: list = []         # [layer][q_head] -> (far_t, d)
    if strategy == "oracle":
        for layer in range(shape.num_layers):
            proxies.append([
                np.vstack([true_q[t][layer][h] for t in range(far_t)])
                for h in range(shape.num_q_heads)
            ])
    else:
        for layer in range(shape.num_layers):
            row = []
            for h in range(shape.num_q_heads):
                synth, _ = sample_synthetic_queries(
                    cache.queries[layer][h], cache.positions, n, far_t,
                    cache.rope, strategy, seed)
                row.append(synth)
            proxies.append(row)

    scale = 1.0 / math.sqrt(shape.head_dim)
    near_vals, far_vals = [], []
    for layer in range(shape.num_layers):
        for h in range(shape.num_q_heads):
            kv = h // shape.group_size
            keys = cache.heads[layer][kv].keys
            for t in range(far_t):
                qt = true_q[t][layer][h]
                qp = proxies[layer][h][t]
                st = keys @ qt * scale
                sp = keys @ qp * scale
                at = np.exp(st - st.max())
                at /= at.sum()
                ap = np.exp(sp - sp.max())
                ap /= ap.sum()
                denom = np.linalg.norm(at) * np.linalg.norm(ap)
                cos = float(at @ ap / denom) if denom > 0 else 0.0
                (near_vals if t < near_t else far_vals).append(cos)
    return float(np.mean(near_vals)), float(np.mean(far_vals))


def evaluate_compressed(model: ToyModel, ref_cache: ModelKvCache,
                        comp_cache: CompressedModelCache, near_t: int = 8,
                        far_t: int | None = None, strategy: str = "uniform",
                        seed: int = 0) -> EvalReport:
    """Full evaluation bundle for one compressed cache."""
    if ref_cache.ref_tokens is None or ref_cache.ref_logits is None:
        raise ValueError("reference cache lacks continuation tokens or logits")
    if comp_cache.shape != ref_cache.shape:
        raise ValueError("cache shapes do not match")
    t_steps = len(ref_cache.ref_tokens)
    logits_comp, _ = decode_teacher_forced(model, comp_cache, ref_cache.ref_tokens, t_steps)
    stats = kl_report(logits_comp, ref_cache.ref_logits)
    profile = layer_error_profile(model, ref_cache, comp_cache,
                                  ref_cache.ref_tokens, t_steps)
    if far_t is None:
        far_t = t_steps
    near_t = min(near_t, far_t - 1)
    if near_t >= 1:
        near, far = attn_cosine_horizons(model, ref_cache, strategy, near_t, far_t, seed)
    else:
        near, far = float("nan"), float("nan")  # one decode step: no horizon split
    return EvalReport(
        kl_mean=stats.kl_mean,
        kl_per_token=stats.kl_per_token,
        layer_mse_profile=profile,
        kl_max_over_mean=stats.kl_max_over_mean,
        kl_top5_fraction=stats.kl_top5_fraction,
        attn_cos_near=near,
        attn_cos_far=far,
    )
