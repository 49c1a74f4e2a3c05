"""A small seeded GQA transformer for desk-scale experiments.

Pre-norm residual blocks with rotary attention and a two-layer feed-forward:
enough structure to make compression difficulty real, small enough that a
full compress-and-evaluate cycle runs in seconds. Weights are a pure
function of the seed. Attention sharpness varies across layers by design so
that per-layer difficulty differences exist for the allocator to exploit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .attention import ModelShape
from .cache import HeadCache, ModelKvCache, snap_f32
from .rope import RopeConfig, rope_apply_rows


@dataclass(frozen=True)
class ToyModelConfig:
    shape: ModelShape
    vocab: int = 64
    seed: int = 0
    weight_scale: float = 1.7
    theta_base: float = 10000.0

    def __post_init__(self):
        if self.vocab < 8:
            raise ValueError("vocab must be >= 8")
        if self.weight_scale <= 0:
            raise ValueError("weight_scale must be positive")

    @property
    def hidden(self) -> int:
        return self.shape.num_q_heads * self.shape.head_dim

    @property
    def rope(self) -> RopeConfig:
        return RopeConfig(head_dim=self.shape.head_dim, theta_base=self.theta_base,
                          pairing="adjacent")

    def to_dict(self) -> dict:
        return {
            "num_layers": self.shape.num_layers,
            "num_q_heads": self.shape.num_q_heads,
            "num_kv_heads": self.shape.num_kv_heads,
            "head_dim": self.shape.head_dim,
            "vocab": self.vocab,
            "seed": self.seed,
            "weight_scale": self.weight_scale,
            "theta_base": self.theta_base,
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "ToyModelConfig":
        return cls(
            shape=ModelShape(num_layers=obj["num_layers"], num_q_heads=obj["num_q_heads"],
                             num_kv_heads=obj["num_kv_heads"], head_dim=obj["head_dim"]),
            vocab=obj["vocab"], seed=obj["seed"],
            weight_scale=obj["weight_scale"], theta_base=obj["theta_base"],
        )


@dataclass
class ToyModel:
    config: ToyModelConfig
    embed: np.ndarray
    layers: list   # dicts with wq, wk, wv, wo, w1, w2
    w_out: np.ndarray

    @property
    def shape(self) -> ModelShape:
        return self.config.shape

    @property
    def rope(self) -> RopeConfig:
        return self.config.rope


def _rmsnorm(x: np.ndarray) -> np.ndarray:
    return x / np.sqrt(np.mean(x * x, axis=-1, keepdims=True) + 1e-6)


def _silu(x: np.ndarray) -> np.ndarray:
    return x / (1.0 + np.exp(-x))


EMBED_ANISOTROPY = 6.0
ATTN_GAIN = 3.0
HEAVY_HITTER_GAIN = 2.5
FFN_GAIN = 1.5


def layer_sharpness(layer: int, num_layers: int) -> float:
    """Per-layer attention temperature factor in [0.85, 1.25]."""
    if num_layers == 1:
        return 1.0
    return 0.85 + 0.4 * layer / (num_layers - 1)


def build_toy_model(config: ToyModelConfig) -> ToyModel:
    """Deterministic seeded weights; identical seed gives identical arrays."""
    shape = config.shape
    hidden = config.hidden
    d = shape.head_dim
    ffn = 2 * hidden
    rng = np.random.default_rng(np.random.SeedSequence((config.seed, 0xA11CE)))
    s = config.weight_scale

    def dense(rows, cols, scale):
        return rng.normal(0.0, scale / math.sqrt(rows), size=(rows, cols))

    # Token embeddings share a strong common component (anisotropy), which is
    # what keeps de-rotated query content vectors nearly stationary across
    # positions; without it the synthetic-future-query construction has no
    # signal to exploit.
    common = EMBED_ANISOTROPY * rng.normal(0.0, 1.0, size=hidden)
    embed = rng.normal(0.0, 1.0, size=(config.vocab, hidden)) + common
    common_unit = common / np.linalg.norm(common)
    group = shape.group_size
    layers = []
    for layer in range(shape.num_layers):
        sharp = layer_sharpness(layer, shape.num_layers)
        wq = dense(hidden, shape.num_q_heads * d, s * sharp)
        wk = dense(hidden, shape.num_kv_heads * d, s * sharp)
        wv = dense(hidden, shape.num_kv_heads * d, 1.0)
        # Null the shared embedding direction in the value projection, as a
        # trained one would: values must differ across positions or
        # compression quality cannot separate methods.
        wv -= np.outer(common_unit, common_unit @ wv)
        # Heavy hitters: tokens whose deviation lies along a per-layer
        # direction get keys boosted toward the mean query of their group,
        # giving a few positions outsized attention mass at any entropy.
        q_mean = common_unit @ wq
        for kv in range(shape.num_kv_heads):
            hh_dir = rng.normal(0.0, 1.0, size=hidden)
            hh_dir -= (hh_dir @ common_unit) * common_unit
            hh_dir /= np.linalg.norm(hh_dir)
            target = np.zeros(d)
            for qh in range(kv * group, (kv + 1) * group):
                target += q_mean[qh * d:(qh + 1) * d]
            target /= max(np.linalg.norm(target), 1e-12)
            wk[:, kv * d:(kv + 1) * d] += (
                HEAVY_HITTER_GAIN * sharp * np.outer(hh_dir, target))
        layers.append({
            "wq": wq,
            "wk": wk,
            "wv": wv,
            # output projections carry gain so the blocks meaningfully
            # transform the anisotropy-inflated residual stream
            "wo": dense(shape.num_q_heads * d, hidden, ATTN_GAIN),
            "w1": dense(hidden, ffn, 1.0),
            "w2": dense(ffn, hidden, FFN_GAIN),
        })
    w_out = rng.normal(0.0, 1.0 / math.sqrt(hidden), size=(hidden, config.vocab))
    return ToyModel(config=config, embed=embed, layers=layers, w_out=w_out)


def _project_heads(x: np.ndarray, w: np.ndarray, n_heads: int, d: int) -> np.ndarray:
    """(S, hidden) @ w -> (S, n_heads, d)."""
    return (x @ w).reshape(x.shape[0], n_heads, d)


def forward_full(model: ToyModel, tokens, positions=None, capture=False):
    """Causal forward over a whole token sequence.

    Returns (logits, internals); internals carries per-layer rotated q/k/v
    head tensors and post-block hidden states when capture is on.
    """
    cfg = model.config
    shape = cfg.shape
    d = shape.head_dim
    tokens = np.asarray(tokens, dtype=np.int64)
    if tokens.ndim != 1 or tokens.size == 0:
        raise ValueError("tokens must be a nonempty 1-D sequence")
    if tokens.min() < 0 or tokens.max() >= cfg.vocab:
        raise ValueError("token out of vocab")
    n = tokens.shape[0]
    pos = np.arange(n) if positions is None else np.asarray(positions)
    h = model.embed[tokens]
    internals = {"q": [], "k": [], "v": [], "hidden": []} if capture else None
    mask = np.tril(np.ones((n, n), dtype=bool))
    for layer in model.layers:
        x = _rmsnorm(h)
        q = _project_heads(x, layer["wq"], shape.num_q_heads, d)
        k = _project_heads(x, layer["wk"], shape.num_kv_heads, d)
        v = _project_heads(x, layer["wv"], shape.num_kv_heads, d)
        for head in range(shape.num_q_heads):
            q[:, head, :] = rope_apply_rows(q[:, head, :], pos, cfg.rope)
        for head in range(shape.num_kv_heads):
            k[:, head, :] = rope_apply_rows(k[:, head, :], pos, cfg.rope)
        attn = np.empty_like(q)
        for head in range(shape.num_q_heads):
            kv = head // shape.group_size
            scores = (q[:, head, :] @ k[:, kv, :].T) / math.sqrt(d)
            scores = np.where(mask, scores, -np.inf)
            scores -= scores.max(axis=1, keepdims=True)
            p = np.exp(scores)
            p /= p.sum(axis=1, keepdims=True)
            attn[:, head, :] = p @ v[:, kv, :]
        h = h + attn.reshape(n, -1) @ layer["wo"]
        x2 = _rmsnorm(h)
        h = h + _silu(x2 @ layer["w1"]) @ layer["w2"]
        if capture:
            internals["q"].append(q)
            internals["k"].append(k)
            internals["v"].append(v)
            internals["hidden"].append(h.copy())
    logits = _rmsnorm(h) @ model.w_out
    return logits, internals


def prefill(model: ToyModel, tokens) -> tuple[ModelKvCache, np.ndarray]:
    """Run the context through the model and collect its KV caches.

    Keys and queries are stored RoPE-encoded at their true positions, in
    full f64 (snap_cache quantizes for interchange). Returns (cache,
    per-position logits).
    """
    tokens = np.asarray(tokens, dtype=np.int64)
    if tokens.size < 2:
        raise ValueError("prefill needs at least two tokens")
    logits, internals = forward_full(model, tokens, capture=True)
    shape = model.shape
    n = tokens.shape[0]
    positions = np.arange(n)
    heads = []
    queries = []
    for layer in range(shape.num_layers):
        heads.append([
            HeadCache(keys=internals["k"][layer][:, h, :].copy(),
                      values=internals["v"][layer][:, h, :].copy(),
                      positions=positions)
            for h in range(shape.num_kv_heads)
        ])
        queries.append([
            internals["q"][layer][:, h, :].copy()
            for h in range(shape.num_q_heads)
        ])
    cache = ModelKvCache(
        shape=shape, rope=model.rope, context_len=n,
        heads=heads, queries=queries, positions=positions,
        context_tokens=tokens.copy(), toy_config=model.config.to_dict(),
    )
    return cache, logits


def snap_cache(cache: ModelKvCache) -> ModelKvCache:
    """Quantize all float tensors to the f32 grid used by the file format.

    A snapped cache survives write_kvd/read_kvd bit-for-bit.
    """
    heads = [[HeadCache(keys=snap_f32(hc.keys), values=snap_f32(hc.values),
                        positions=hc.positions)
              for hc in row] for row in cache.heads]
    queries = [[snap_f32(q) for q in row] for row in cache.queries]
    return ModelKvCache(
        shape=cache.shape, rope=cache.rope, context_len=cache.context_len,
        heads=heads, queries=queries, positions=cache.positions,
        ref_logits=snap_f32(cache.ref_logits) if cache.ref_logits is not None else None,
        ref_tokens=cache.ref_tokens, context_tokens=cache.context_tokens,
        toy_config=cache.toy_config,
        extra_tensors={k: snap_f32(v) for k, v in cache.extra_tensors.items()},
    )


class _DecodeState:
    """Growable per-layer K/V working copies seeded from a cache."""

    def __init__(self, cache, shape: ModelShape):
        self.keys = []
        self.values = []
        for layer in range(shape.num_layers):
            krow, vrow = [], []
            for h in range(shape.num_kv_heads):
                if isinstance(cache, ModelKvCache):
                    hc = cache.heads[layer][h]
                    krow.append(hc.keys)
                    vrow.append(hc.values)
                else:
                    ch = cache.heads[layer][h]
                    krow.append(ch.cat_keys())
                    vrow.append(ch.cat_values())
            self.keys.append(krow)
            self.values.append(vrow)

    def append(self, layer: int, head: int, k_new: np.ndarray, v_new: np.ndarray):
        self.keys[layer][head] = np.vstack([self.keys[layer][head], k_new])
        self.values[layer][head] = np.vstack([self.values[layer][head], v_new])


def decode_teacher_forced(model: ToyModel, cache, continuation_tokens, t_steps: int,
                          capture_hidden: bool = False, capture_queries: bool = False):
    """Decode t_steps with ground-truth tokens fed at each step.

    Works identically over a full or compressed cache: each step appends its
    own rotated KV at position context_len + t and attends over everything
    accumulated so far. Returns (logits, captures) where captures holds
    per-step hidden states and/or query vectors when requested.
    """
    cfg = model.config
    shape = cfg.shape
    d = shape.head_dim
    cont = np.asarray(continuation_tokens, dtype=np.int64)
    if t_steps < 1:
        raise ValueError("t_steps must be >= 1")
    if cont.size < t_steps:
        raise ValueError("not enough continuation tokens")
    if cont[:t_steps].min() < 0 or cont[:t_steps].max() >= cfg.vocab:
        raise ValueError("token out of vocab")
    state = _DecodeState(cache, shape)
    n0 = cache.context_len
    logits = np.empty((t_steps, cfg.vocab))
    captures: dict = {}
    if capture_hidden:
        captures["hidden"] = []   # [step][layer] -> (hidden,)
    if capture_queries:
        captures["queries"] = []  # [step][layer][q_head] -> (d,)
    for t in range(t_steps):
        position = n0 + t
        h = model.embed[cont[t]].copy()
        step_hidden = []
        step_queries = []
        for layer_idx, layer in enumerate(model.layers):
            x = _rmsnorm(h[None, :])
            q = _project_heads(x, layer["wq"], shape.num_q_heads, d)[0]
            k = _project_heads(x, layer["wk"], shape.num_kv_heads, d)[0]
            v = _project_heads(x, layer["wv"], shape.num_kv_heads, d)[0]
            q = rope_apply_rows(q, np.full(shape.num_q_heads, position), cfg.rope)
            k = rope_apply_rows(k, np.full(shape.num_kv_heads, position), cfg.rope)
            for kv in range(shape.num_kv_heads):
                state.append(layer_idx, kv, k[kv][None, :], v[kv][None, :])
            attn = np.empty((shape.num_q_heads, d))
            for head in range(shape.num_q_heads):
                kv = head // shape.group_size
                keys = state.keys[layer_idx][kv]
                scores = (keys @ q[head]) / math.sqrt(d)
                scores -= scores.max()
                p = np.exp(scores)
                p /= p.sum()
                attn[head] = p @ state.values[layer_idx][kv]
            h = h + attn.reshape(-1) @ layer["wo"]
            x2 = _rmsnorm(h[None, :])[0]
            h = h + _silu(x2 @ layer["w1"]) @ layer["w2"]
            if capture_hidden:
                step_hidden.append(h.copy())
            if capture_queries:
                step_queries.append(q.copy())
        logits[t] = _rmsnorm(h[None, :])[0] @ model.w_out
        if capture_hidden:
            captures["hidden"].append(step_hidden)
        if capture_queries:
            captures["queries"].append(step_queries)
    return logits, captures


def sample_tokens(vocab: int, n: int, seed: int, n_topics: int = 4,
                  segment_len: int = 64, drift: float = 1.2,
                  phase: int = 32) -> np.ndarray:
    """Seeded token stream with mildly rotating topic segments.

    All segments share a base unigram distribution; each segment of
    segment_len positions tilts it toward one of n_topics, cycling
    deterministically. The rotation continues into any continuation region,
    so nearby future tokens resemble the recent past while far future tokens
    drift to other topics. drift sets the tilt strength; phase keeps segment
    boundaries away from power-of-two context ends.
    """
    rng = np.random.default_rng(np.random.SeedSequence((seed, 0x70C1C5)))
    base = rng.normal(0.0, 1.5, size=vocab)
    logits = base[None, :] + drift * rng.normal(0.0, 1.0, size=(n_topics, vocab))
    probs = np.exp(logits - logits.max(axis=1, keepdims=True))
    probs /= probs.sum(axis=1, keepdims=True)
    out = np.empty(n, dtype=np.int64)
    for i in range(n):
        topic = ((i + phase) // segment_len) % n_topics
        out[i] = rng.choice(vocab, p=probs[topic])
    return out
